"""Durable chat state: sessions, threads, messages, feedback, history cache.

Streaming answers commit in two transactions: the user message becomes
durable before generation starts, the assistant message after it ends. An
interruption can therefore lose the answer but never the question, and a
thread's stored messages always alternate user/assistant with at most one
trailing unanswered user message.
"""

from __future__ import annotations

import csv
import json
import secrets
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence, TextIO

import sqlalchemy as sa

MAX_THREADS_PER_SESSION = 50
MAX_MESSAGE_CHARS = 10_000
HISTORY_TURNS = 3
HISTORY_CACHE_CAPACITY = 500
ANSWER_PREVIEW_CHARS = 200

FEEDBACK_CSV_HEADER = (
    "created_at",
    "question",
    "answer_preview",
    "answer_length",
    "num_references",
    "star_rating",
    "comment",
)


class ChatStoreError(Exception):
    """Base class for chat persistence failures."""


class SessionNotFoundError(ChatStoreError):
    pass


class ThreadNotFoundError(ChatStoreError):
    pass


class ThreadCapExceededError(ChatStoreError):
    pass


class ExchangeConflictError(ChatStoreError):
    """The thread already has an unanswered user message."""


class NoCompletedExchangeError(ChatStoreError):
    pass


class ChatValidationError(ChatStoreError):
    """Input outside documented bounds (message length, star rating)."""


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class Turn:
    user_text: str
    assistant_text: str


@dataclass(frozen=True)
class ThreadInfo:
    thread_id: str
    session_id: str
    created_at: str


@dataclass(frozen=True)
class StoredMessage:
    message_id: str
    thread_id: str
    position: int
    role: str
    content: str
    citations: tuple[tuple[str, str], ...]
    status: str | None
    created_at: str


@dataclass(frozen=True)
class FeedbackRecord:
    feedback_id: str
    thread_id: str
    question: str
    answer_preview: str
    answer_length: int
    num_references: int
    star_rating: int
    comment: str
    created_at: str


class HistoryCache:
    """LRU map thread_id -> last completed turns, bounded both ways.

    At most HISTORY_CACHE_CAPACITY threads are cached and each entry holds at
    most HISTORY_TURNS turns; everything beyond that is reloadable from the
    durable store, so eviction is always safe.
    """

    def __init__(self, capacity: int = HISTORY_CACHE_CAPACITY, turns: int = HISTORY_TURNS):
        if capacity < 1 or turns < 1:
            raise ValueError("capacity and turns must be positive")
        self.capacity = capacity
        self.turns = turns
        self._lock = threading.Lock()
        self._entries: OrderedDict[str, tuple[Turn, ...]] = OrderedDict()

    def get(self, thread_id: str) -> tuple[Turn, ...] | None:
        with self._lock:
            window = self._entries.get(thread_id)
            if window is not None:
                self._entries.move_to_end(thread_id)
            return window

    def put(self, thread_id: str, window: Sequence[Turn]) -> None:
        with self._lock:
            self._entries[thread_id] = tuple(window[-self.turns:])
            self._entries.move_to_end(thread_id)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def drop(self, thread_id: str) -> None:
        with self._lock:
            self._entries.pop(thread_id, None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def make_engine(url: str) -> sa.Engine:
    """Engine tuned per backend; in-memory SQLite shares one connection so
    every thread sees the same database."""
    if url.startswith("sqlite"):
        connect_args = {"check_same_thread": False}
        if ":memory:" in url:
            return sa.create_engine(url, connect_args=connect_args, poolclass=sa.pool.StaticPool)
        return sa.create_engine(url, connect_args=connect_args)
    return sa.create_engine(url, pool_pre_ping=True)


class ChatStore:
    """All chat durability behind one object; every public method is safe to
    call from concurrent request handlers."""

    def __init__(
        self,
        engine: sa.Engine,
        *,
        cache: HistoryCache | None = None,
        now: Callable[[], datetime] = _utcnow,
        token_factory: Callable[[], str] = lambda: secrets.token_urlsafe(32),
        id_factory: Callable[[], str] = lambda: uuid.uuid4().hex,
    ):
        self.engine = engine
        # explicit None check: an empty HistoryCache is falsy via __len__
        self.cache = cache if cache is not None else HistoryCache()
        self._now = now
        self._token_factory = token_factory
        self._id_factory = id_factory

        self._metadata = sa.MetaData()
        self.sessions = sa.Table(
            "chat_sessions",
            self._metadata,
            sa.Column("session_id", sa.String(128), primary_key=True),
            sa.Column("created_at", sa.String(40), nullable=False),
            sa.Column("thread_count", sa.Integer, nullable=False, server_default="0"),
        )
        self.threads = sa.Table(
            "chat_threads",
            self._metadata,
            sa.Column("thread_id", sa.String(64), primary_key=True),
            sa.Column("session_id", sa.String(128), sa.ForeignKey("chat_sessions.session_id"), nullable=False),
            sa.Column("created_at", sa.String(40), nullable=False),
        )
        self.messages = sa.Table(
            "chat_messages",
            self._metadata,
            sa.Column("message_id", sa.String(64), primary_key=True),
            sa.Column("thread_id", sa.String(64), sa.ForeignKey("chat_threads.thread_id"), nullable=False),
            sa.Column("position", sa.Integer, nullable=False),
            sa.Column("role", sa.String(16), nullable=False),
            sa.Column("content", sa.Text, nullable=False),
            sa.Column("citations_json", sa.Text, nullable=False, server_default="[]"),
            sa.Column("status", sa.String(16), nullable=True),
            sa.Column("created_at", sa.String(40), nullable=False),
            sa.UniqueConstraint("thread_id", "position", name="uq_thread_position"),
        )
        self.feedback = sa.Table(
            "chat_feedback",
            self._metadata,
            sa.Column("feedback_id", sa.String(64), primary_key=True),
            sa.Column("thread_id", sa.String(64), sa.ForeignKey("chat_threads.thread_id"), nullable=False),
            sa.Column("question", sa.Text, nullable=False),
            sa.Column("answer_preview", sa.String(ANSWER_PREVIEW_CHARS), nullable=False),
            sa.Column("answer_length", sa.Integer, nullable=False),
            sa.Column("num_references", sa.Integer, nullable=False),
            sa.Column("star_rating", sa.Integer, nullable=False),
            sa.Column("comment", sa.Text, nullable=False, server_default=""),
            sa.Column("created_at", sa.String(40), nullable=False),
        )
        self._metadata.create_all(engine)

    # -- sessions and threads -------------------------------------------------

    def create_session(self) -> str:
        token = self._token_factory()
        with self.engine.begin() as conn:
            conn.execute(
                sa.insert(self.sessions),
                {"session_id": token, "created_at": self._now().isoformat(), "thread_count": 0},
            )
        return token

    def create_thread(self, session_id: str) -> str:
        thread_id = self._id_factory()
        with self.engine.begin() as conn:
            exists = conn.execute(
                sa.select(self.sessions.c.session_id).where(self.sessions.c.session_id == session_id)
            ).first()
            if exists is None:
                raise SessionNotFoundError(session_id)
            # the guarded increment is the atomic cap check
            claimed = conn.execute(
                sa.update(self.sessions)
                .where(
                    self.sessions.c.session_id == session_id,
                    self.sessions.c.thread_count < MAX_THREADS_PER_SESSION,
                )
                .values(thread_count=self.sessions.c.thread_count + 1)
            )
            if claimed.rowcount == 0:
                raise ThreadCapExceededError(
                    f"session already has {MAX_THREADS_PER_SESSION} threads"
                )
            conn.execute(
                sa.insert(self.threads),
                {"thread_id": thread_id, "session_id": session_id, "created_at": self._now().isoformat()},
            )
        return thread_id

    def get_thread(self, thread_id: str) -> ThreadInfo:
        with self.engine.connect() as conn:
            row = conn.execute(
                sa.select(self.threads).where(self.threads.c.thread_id == thread_id)
            ).first()
        if row is None:
            raise ThreadNotFoundError(thread_id)
        return ThreadInfo(thread_id=row.thread_id, session_id=row.session_id, created_at=row.created_at)

    def session_thread_count(self, session_id: str) -> int:
        with self.engine.connect() as conn:
            row = conn.execute(
                sa.select(self.sessions.c.thread_count).where(self.sessions.c.session_id == session_id)
            ).first()
        if row is None:
            raise SessionNotFoundError(session_id)
        return int(row.thread_count)

    # -- the two-transaction exchange ------------------------------------------

    def begin_exchange(self, thread_id: str, user_content: str) -> str:
        """Transaction one: the user message, durable before any generation."""
        if not user_content.strip():
            raise ChatValidationError("message must be non-empty")
        if len(user_content) > MAX_MESSAGE_CHARS:
            raise ChatValidationError(
                f"message is {len(user_content)} chars, limit is {MAX_MESSAGE_CHARS}"
            )
        message_id = self._id_factory()
        with self.engine.begin() as conn:
            self._lock_thread(conn, thread_id)
            last = conn.execute(
                sa.select(self.messages.c.role, self.messages.c.position)
                .where(self.messages.c.thread_id == thread_id)
                .order_by(self.messages.c.position.desc())
                .limit(1)
            ).first()
            if last is not None and last.role == "user":
                raise ExchangeConflictError("thread already has an unanswered user message")
            position = 0 if last is None else last.position + 1
            conn.execute(
                sa.insert(self.messages),
                {
                    "message_id": message_id,
                    "thread_id": thread_id,
                    "position": position,
                    "role": "user",
                    "content": user_content,
                    "citations_json": "[]",
                    "status": None,
                    "created_at": self._now().isoformat(),
                },
            )
        return message_id

    def complete_exchange(
        self,
        thread_id: str,
        user_message_id: str,
        *,
        final_text: str,
        citations: Sequence[tuple[str, str]],
        status: str,
    ) -> str:
        """Transaction two: the assistant message, after generation ends."""
        if status not in ("complete", "interrupted"):
            raise ChatValidationError(f"unknown status {status!r}")
        message_id = self._id_factory()
        with self.engine.begin() as conn:
            self._lock_thread(conn, thread_id)
            last = conn.execute(
                sa.select(self.messages.c.message_id, self.messages.c.role, self.messages.c.position)
                .where(self.messages.c.thread_id == thread_id)
                .order_by(self.messages.c.position.desc())
                .limit(1)
            ).first()
            if last is None or last.role != "user" or last.message_id != user_message_id:
                raise NoCompletedExchangeError("no matching pending user message")
            conn.execute(
                sa.insert(self.messages),
                {
                    "message_id": message_id,
                    "thread_id": thread_id,
                    "position": last.position + 1,
                    "role": "assistant",
                    "content": final_text,
                    "citations_json": json.dumps([list(c) for c in citations]),
                    "status": status,
                    "created_at": self._now().isoformat(),
                },
            )
        self.cache.put(thread_id, self._load_window(thread_id))
        return message_id

    def _lock_thread(self, conn: sa.Connection, thread_id: str) -> None:
        """Serializes concurrent exchanges on one thread; missing thread fails here."""
        stmt = sa.select(self.threads.c.thread_id).where(self.threads.c.thread_id == thread_id)
        if self.engine.dialect.name != "sqlite":
            stmt = stmt.with_for_update()
        if conn.execute(stmt).first() is None:
            raise ThreadNotFoundError(thread_id)

    # -- history ---------------------------------------------------------------

    def _load_window(self, thread_id: str) -> list[Turn]:
        with self.engine.connect() as conn:
            rows = conn.execute(
                sa.select(self.messages.c.role, self.messages.c.content)
                .where(self.messages.c.thread_id == thread_id)
                .order_by(self.messages.c.position)
            ).all()
        turns = []
        for i in range(0, len(rows) - 1, 2):
            if rows[i].role == "user" and rows[i + 1].role == "assistant":
                turns.append(Turn(user_text=rows[i].content, assistant_text=rows[i + 1].content))
        return turns[-HISTORY_TURNS:]

    def history_window(self, thread_id: str) -> list[Turn]:
        """Last completed turns, cache-first; a miss repopulates the cache."""
        cached = self.cache.get(thread_id)
        if cached is not None:
            return list(cached)
        self.get_thread(thread_id)
        window = self._load_window(thread_id)
        self.cache.put(thread_id, window)
        return window

    def list_messages(self, thread_id: str) -> list[StoredMessage]:
        self.get_thread(thread_id)
        with self.engine.connect() as conn:
            rows = conn.execute(
                sa.select(self.messages)
                .where(self.messages.c.thread_id == thread_id)
                .order_by(self.messages.c.position)
            ).all()
        return [
            StoredMessage(
                message_id=r.message_id,
                thread_id=r.thread_id,
                position=r.position,
                role=r.role,
                content=r.content,
                citations=tuple((c[0], c[1]) for c in json.loads(r.citations_json)),
                status=r.status,
                created_at=r.created_at,
            )
            for r in rows
        ]

    # -- feedback ----------------------------------------------------------------

    def record_feedback(self, thread_id: str, star_rating: int, comment: str | None = None) -> FeedbackRecord:
        """Snapshot of the thread's most recent completed exchange plus the rating."""
        # bool is an int subclass; a JSON true must not become a 1-star rating
        if isinstance(star_rating, bool) or not isinstance(star_rating, int) or not 1 <= star_rating <= 5:
            raise ChatValidationError(f"star_rating must be an integer in [1, 5], got {star_rating!r}")
        self.get_thread(thread_id)
        with self.engine.connect() as conn:
            rows = conn.execute(
                sa.select(self.messages.c.role, self.messages.c.content, self.messages.c.citations_json)
                .where(self.messages.c.thread_id == thread_id)
                .order_by(self.messages.c.position.desc())
                .limit(2)
            ).all()
        if len(rows) < 2 or rows[0].role != "assistant" or rows[1].role != "user":
            raise NoCompletedExchangeError("thread has no completed exchange to rate")
        answer = rows[0].content
        record = FeedbackRecord(
            feedback_id=self._id_factory(),
            thread_id=thread_id,
            question=rows[1].content,
            answer_preview=answer[:ANSWER_PREVIEW_CHARS],
            answer_length=len(answer),
            num_references=len(json.loads(rows[0].citations_json)),
            star_rating=star_rating,
            comment=comment or "",
            created_at=self._now().isoformat(),
        )
        with self.engine.begin() as conn:
            conn.execute(
                sa.insert(self.feedback),
                {
                    "feedback_id": record.feedback_id,
                    "thread_id": record.thread_id,
                    "question": record.question,
                    "answer_preview": record.answer_preview,
                    "answer_length": record.answer_length,
                    "num_references": record.num_references,
                    "star_rating": record.star_rating,
                    "comment": record.comment,
                    "created_at": record.created_at,
                },
            )
        return record

    def export_feedback(
        self, since: datetime | None = None, until: datetime | None = None
    ) -> list[FeedbackRecord]:
        with self.engine.connect() as conn:
            rows = conn.execute(
                sa.select(self.feedback).order_by(self.feedback.c.created_at, self.feedback.c.feedback_id)
            ).all()
        out = []
        for r in rows:
            created = datetime.fromisoformat(r.created_at)
            if since is not None and created < since:
                continue
            if until is not None and created > until:
                continue
            out.append(
                FeedbackRecord(
                    feedback_id=r.feedback_id,
                    thread_id=r.thread_id,
                    question=r.question,
                    answer_preview=r.answer_preview,
                    answer_length=r.answer_length,
                    num_references=r.num_references,
                    star_rating=r.star_rating,
                    comment=r.comment,
                    created_at=r.created_at,
                )
            )
        return out

    def ping(self) -> bool:
        """Connectivity probe for health reporting."""
        try:
            with self.engine.connect() as conn:
                conn.execute(sa.select(sa.literal(1)))
            return True
        except sa.exc.SQLAlchemyError:
            return False


def write_feedback_csv(records: Iterable[FeedbackRecord], out: TextIO) -> int:
    """RFC 4180 CSV with the fixed seven-column header; returns the row count."""
    writer = csv.writer(out)
    writer.writerow(FEEDBACK_CSV_HEADER)
    count = 0
    for record in records:
        writer.writerow(
            [
                record.created_at,
                record.question,
                record.answer_preview,
                record.answer_length,
                record.num_references,
                record.star_rating,
                record.comment,
            ]
        )
        count += 1
    return count
