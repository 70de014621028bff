"""Versioned vector index with atomic activation and exact-scan retrieval.

An index build writes a complete new generation side by side with the live
one; activation atomically repoints a LIVE marker, so readers either see the
old index or the new one, never a partial state. One retired generation is
kept so in-flight readers finish cleanly; older ones are deleted.

Retrieval is an exact cosine scan (corpora here are thousands of chunks, not
millions; approximate indexes would add recall noise for no latency win)
followed by maximal-marginal-relevance selection to diversify the final k.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
import sqlalchemy as sa

from .embedding import EmbeddedChunk, cosine_similarity

LIVE_MARKER = "LIVE"
GENERATION_PREFIX = "gen-"

DEFAULT_TOP_K = 8
DEFAULT_FETCH_K = 30
DEFAULT_LAMBDA = 0.7


class VectorStoreError(Exception):
    """Base class for index failures."""


class StoreUnavailableError(VectorStoreError):
    """No live generation is readable; retrieval cannot proceed."""


class GenerationNotFoundError(VectorStoreError):
    pass


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class IndexMeta:
    generation_id: str
    created_at: str
    model_id: str
    dimension: int
    chunk_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "generation_id": self.generation_id,
                "created_at": self.created_at,
                "model_id": self.model_id,
                "dimension": self.dimension,
                "chunk_count": self.chunk_count,
            },
            sort_keys=True,
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "IndexMeta":
        raw = json.loads(text)
        return cls(
            generation_id=str(raw["generation_id"]),
            created_at=str(raw["created_at"]),
            model_id=str(raw["model_id"]),
            dimension=int(raw["dimension"]),
            chunk_count=int(raw["chunk_count"]),
        )


@dataclass(frozen=True)
class ScoredChunk:
    """A retrieved chunk with its query similarity.

    The embedding vector rides along for diversity re-ranking but is not part
    of equality or repr; two results are the same result regardless of which
    generation served them.
    """

    chunk_id: str
    doc_id: str
    seq: int
    text: str
    section_path: tuple[str, ...]
    source_title: str
    score: float
    vector: np.ndarray = field(repr=False, compare=False)


def _record_to_dict(item: EmbeddedChunk) -> dict:
    c = item.chunk
    return {
        "chunk_id": c.chunk_id,
        "doc_id": c.doc_id,
        "seq": c.seq,
        "text": c.text,
        "char_count": c.char_count,
        "section_path": list(c.section_path),
        "source_title": c.source_title,
        "vector": [float(x) for x in item.vector],
    }


class GenerationStorage(Protocol):
    """Persistence contract for index generations and the live pointer."""

    def write_generation(self, meta: IndexMeta, records: Iterable[dict]) -> None: ...

    def read_meta(self, generation_id: str) -> IndexMeta: ...

    def read_records(self, generation_id: str) -> list[dict]: ...

    def set_live(self, generation_id: str) -> None: ...

    def get_live(self) -> str | None: ...

    def list_generations(self) -> list[str]: ...

    def delete_generation(self, generation_id: str) -> None: ...


class FileStorage:
    """Directory-per-generation layout under a single index root.

    gen-<id>/meta.json, gen-<id>/records.jsonl, and a LIVE file holding the
    active generation id. LIVE updates go through write-temp-then-rename so a
    crash mid-swap leaves the previous pointer intact.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _gen_dir(self, generation_id: str) -> Path:
        return self.root / f"{GENERATION_PREFIX}{generation_id}"

    def write_generation(self, meta: IndexMeta, records: Iterable[dict]) -> None:
        gen_dir = self._gen_dir(meta.generation_id)
        if gen_dir.exists():
            raise VectorStoreError(f"generation {meta.generation_id} already exists")
        gen_dir.mkdir(parents=True)
        with open(gen_dir / "records.jsonl", "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        # meta last: its presence marks the generation complete
        (gen_dir / "meta.json").write_text(meta.to_json(), encoding="utf-8")

    def read_meta(self, generation_id: str) -> IndexMeta:
        path = self._gen_dir(generation_id) / "meta.json"
        try:
            return IndexMeta.from_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise GenerationNotFoundError(generation_id) from None

    def read_records(self, generation_id: str) -> list[dict]:
        path = self._gen_dir(generation_id) / "records.jsonl"
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise GenerationNotFoundError(generation_id) from None
        return [json.loads(line) for line in raw.splitlines() if line.strip()]

    def set_live(self, generation_id: str) -> None:
        if not (self._gen_dir(generation_id) / "meta.json").exists():
            raise GenerationNotFoundError(generation_id)
        tmp = self.root / f"{LIVE_MARKER}.tmp"
        tmp.write_text(generation_id + "\n", encoding="utf-8")
        os.replace(tmp, self.root / LIVE_MARKER)

    def get_live(self) -> str | None:
        try:
            value = (self.root / LIVE_MARKER).read_text(encoding="utf-8").strip()
        except FileNotFoundError:
            return None
        return value or None

    def list_generations(self) -> list[str]:
        out = []
        for entry in sorted(self.root.iterdir()):
            if entry.is_dir() and entry.name.startswith(GENERATION_PREFIX):
                out.append(entry.name[len(GENERATION_PREFIX):])
        return out

    def delete_generation(self, generation_id: str) -> None:
        gen_dir = self._gen_dir(generation_id)
        if not gen_dir.exists():
            return
        # meta first: a half-deleted directory must not look complete
        (gen_dir / "meta.json").unlink(missing_ok=True)
        (gen_dir / "records.jsonl").unlink(missing_ok=True)
        for leftover in gen_dir.iterdir():
            leftover.unlink()
        gen_dir.rmdir()


class SqlStorage:
    """Same generation semantics stored in a relational database.

    The live pointer is a single-row table updated transactionally; scanning
    still happens in process, the database is only a durability layer.
    """

    def __init__(self, engine: sa.Engine):
        self.engine = engine
        self._metadata = sa.MetaData()
        self.generations = sa.Table(
            "index_generations",
            self._metadata,
            sa.Column("generation_id", sa.String(64), primary_key=True),
            sa.Column("meta_json", sa.Text, nullable=False),
        )
        self.records = sa.Table(
            "index_records",
            self._metadata,
            sa.Column("generation_id", sa.String(64), primary_key=True),
            sa.Column("position", sa.Integer, primary_key=True),
            sa.Column("record_json", sa.Text, nullable=False),
        )
        self.live = sa.Table(
            "index_live",
            self._metadata,
            sa.Column("singleton", sa.Integer, primary_key=True),
            sa.Column("generation_id", sa.String(64), nullable=False),
        )
        self._metadata.create_all(engine)

    def write_generation(self, meta: IndexMeta, records: Iterable[dict]) -> None:
        rows = [
            {"generation_id": meta.generation_id, "position": i, "record_json": json.dumps(r, sort_keys=True)}
            for i, r in enumerate(records)
        ]
        with self.engine.begin() as conn:
            existing = conn.execute(
                sa.select(self.generations.c.generation_id).where(
                    self.generations.c.generation_id == meta.generation_id
                )
            ).first()
            if existing:
                raise VectorStoreError(f"generation {meta.generation_id} already exists")
            if rows:
                conn.execute(sa.insert(self.records), rows)
            conn.execute(
                sa.insert(self.generations),
                {"generation_id": meta.generation_id, "meta_json": meta.to_json()},
            )

    def read_meta(self, generation_id: str) -> IndexMeta:
        with self.engine.connect() as conn:
            row = conn.execute(
                sa.select(self.generations.c.meta_json).where(
                    self.generations.c.generation_id == generation_id
                )
            ).first()
        if row is None:
            raise GenerationNotFoundError(generation_id)
        return IndexMeta.from_json(row.meta_json)

    def read_records(self, generation_id: str) -> list[dict]:
        with self.engine.connect() as conn:
            exists = conn.execute(
                sa.select(self.generations.c.generation_id).where(
                    self.generations.c.generation_id == generation_id
                )
            ).first()
            if exists is None:
                raise GenerationNotFoundError(generation_id)
            rows = conn.execute(
                sa.select(self.records.c.record_json)
                .where(self.records.c.generation_id == generation_id)
                .order_by(self.records.c.position)
            ).all()
        return [json.loads(r.record_json) for r in rows]

    def set_live(self, generation_id: str) -> None:
        with self.engine.begin() as conn:
            exists = conn.execute(
                sa.select(self.generations.c.generation_id).where(
                    self.generations.c.generation_id == generation_id
                )
            ).first()
            if exists is None:
                raise GenerationNotFoundError(generation_id)
            updated = conn.execute(
                sa.update(self.live)
                .where(self.live.c.singleton == 1)
                .values(generation_id=generation_id)
            )
            if updated.rowcount == 0:
                conn.execute(sa.insert(self.live), {"singleton": 1, "generation_id": generation_id})

    def get_live(self) -> str | None:
        with self.engine.connect() as conn:
            row = conn.execute(
                sa.select(self.live.c.generation_id).where(self.live.c.singleton == 1)
            ).first()
        return row.generation_id if row else None

    def list_generations(self) -> list[str]:
        with self.engine.connect() as conn:
            rows = conn.execute(
                sa.select(self.generations.c.generation_id).order_by(self.generations.c.generation_id)
            ).all()
        return [r.generation_id for r in rows]

    def delete_generation(self, generation_id: str) -> None:
        with self.engine.begin() as conn:
            conn.execute(sa.delete(self.records).where(self.records.c.generation_id == generation_id))
            conn.execute(sa.delete(self.generations).where(self.generations.c.generation_id == generation_id))


def mmr_select(
    query_vector: np.ndarray,
    candidates: Sequence[ScoredChunk],
    k: int,
    lambda_mult: float = DEFAULT_LAMBDA,
) -> list[ScoredChunk]:
    """Greedy maximal-marginal-relevance selection.

    The first pick is the candidate most similar to the query. Each later
    pick maximizes lambda * sim(query, d) - (1 - lambda) * max sim(d, s) over
    already-selected s. Ties break toward the smaller chunk_id so results are
    reproducible across runs and platforms.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not 0.0 <= lambda_mult <= 1.0:
        raise ValueError("lambda_mult must be within [0, 1]")
    if not candidates:
        return []

    remaining = list(candidates)
    selected: list[ScoredChunk] = []
    while remaining and len(selected) < k:
        best_index = None
        best_score = None
        for i, cand in enumerate(remaining):
            if selected:
                redundancy = max(cosine_similarity(cand.vector, s.vector) for s in selected)
                score = lambda_mult * cand.score - (1.0 - lambda_mult) * redundancy
            else:
                score = cand.score
            if (
                best_index is None
                or score > best_score
                or (score == best_score and cand.chunk_id < remaining[best_index].chunk_id)
            ):
                best_index = i
                best_score = score
        selected.append(remaining.pop(best_index))
    return selected


class VectorStore:
    """Reader/writer facade over one storage backend.

    Searches pin the live generation at call start; if the generation vanishes
    mid-read (retired by a concurrent activation), the lookup transparently
    re-resolves the live pointer and retries.
    """

    RELOAD_ATTEMPTS = 3

    def __init__(self, storage: GenerationStorage, *, now: Callable[[], datetime] = _utcnow):
        self.storage = storage
        self._now = now
        self._lock = threading.Lock()
        self._cache: dict[str, tuple[IndexMeta, list[ScoredChunk], np.ndarray]] = {}

    # -- build side ---------------------------------------------------------

    def _new_generation_id(self) -> str:
        existing = set(self.storage.list_generations())
        stamp = time.time_ns()
        while f"{stamp:020d}" in existing:
            stamp += 1
        return f"{stamp:020d}"

    def build_generation(self, embedded: Sequence[EmbeddedChunk], model_id: str) -> str:
        """Write a complete new generation; does not activate it."""
        if embedded:
            dims = {item.vector.shape[0] for item in embedded}
            if len(dims) != 1:
                raise VectorStoreError(f"mixed vector dimensions in one build: {sorted(dims)}")
            dimension = dims.pop()
        else:
            dimension = 0
        generation_id = self._new_generation_id()
        meta = IndexMeta(
            generation_id=generation_id,
            created_at=self._now().isoformat(),
            model_id=model_id,
            dimension=dimension,
            chunk_count=len(embedded),
        )
        self.storage.write_generation(meta, (_record_to_dict(item) for item in embedded))
        return generation_id

    def activate(self, generation_id: str) -> None:
        """Point LIVE at generation_id, then prune all but one retired generation."""
        previous = self.storage.get_live()
        self.storage.set_live(generation_id)
        keep = {generation_id}
        if previous and previous != generation_id:
            keep.add(previous)
        for stale in self.storage.list_generations():
            if stale not in keep:
                self.storage.delete_generation(stale)
        with self._lock:
            for cached in list(self._cache):
                if cached not in keep:
                    del self._cache[cached]

    # -- read side ----------------------------------------------------------

    def live_generation(self) -> str | None:
        return self.storage.get_live()

    def _load(self, generation_id: str) -> tuple[IndexMeta, list[ScoredChunk], np.ndarray]:
        with self._lock:
            hit = self._cache.get(generation_id)
        if hit is not None:
            return hit
        meta = self.storage.read_meta(generation_id)
        raw = self.storage.read_records(generation_id)
        chunks = []
        vectors = np.zeros((len(raw), meta.dimension), dtype=np.float64)
        for i, rec in enumerate(raw):
            vec = np.asarray(rec["vector"], dtype=np.float64)
            vectors[i] = vec
            chunks.append(
                ScoredChunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    seq=int(rec["seq"]),
                    text=rec["text"],
                    section_path=tuple(rec["section_path"]),
                    source_title=rec["source_title"],
                    score=0.0,
                    vector=vec,
                )
            )
        loaded = (meta, chunks, vectors)
        with self._lock:
            self._cache[generation_id] = loaded
            while len(self._cache) > 2:
                oldest = min(self._cache)
                if oldest == generation_id:
                    break
                del self._cache[oldest]
        return loaded

    def check_ready(self) -> IndexMeta:
        """Cheap liveness check: the live generation's meta must be readable."""
        live = self.storage.get_live()
        if live is None:
            raise StoreUnavailableError("no live generation")
        try:
            return self.storage.read_meta(live)
        except VectorStoreError as exc:
            raise StoreUnavailableError(f"live generation unreadable: {exc}") from exc

    def similarity_search(self, query_vector: np.ndarray, fetch_k: int = DEFAULT_FETCH_K) -> list[ScoredChunk]:
        """Exact cosine scan of the live generation, best fetch_k results.

        Ordered by similarity descending, chunk_id ascending on exact ties.
        """
        if fetch_k < 1:
            raise ValueError("fetch_k must be positive")
        last_error: Exception | None = None
        for _ in range(self.RELOAD_ATTEMPTS):
            live = self.storage.get_live()
            if live is None:
                raise StoreUnavailableError("no live generation")
            try:
                meta, chunks, vectors = self._load(live)
            except (VectorStoreError, OSError, json.JSONDecodeError) as exc:
                last_error = exc
                continue
            if not chunks:
                return []
            q = np.asarray(query_vector, dtype=np.float64)
            if q.shape != (meta.dimension,):
                raise ValueError(f"query dimension {q.shape} does not match index ({meta.dimension},)")
            q_norm = float(np.linalg.norm(q))
            if q_norm == 0.0:
                raise ValueError("query vector has zero norm")
            norms = np.linalg.norm(vectors, axis=1)
            norms[norms == 0.0] = 1.0
            sims = np.clip((vectors @ q) / (norms * q_norm), -1.0, 1.0)
            order = sorted(range(len(chunks)), key=lambda i: (-sims[i], chunks[i].chunk_id))
            out = []
            for i in order[:fetch_k]:
                c = chunks[i]
                out.append(
                    ScoredChunk(
                        chunk_id=c.chunk_id,
                        doc_id=c.doc_id,
                        seq=c.seq,
                        text=c.text,
                        section_path=c.section_path,
                        source_title=c.source_title,
                        score=float(sims[i]),
                        vector=c.vector,
                    )
                )
            return out
        raise StoreUnavailableError(f"live generation unreadable after retries: {last_error}")

    def retrieve(
        self,
        query_vector: np.ndarray,
        k: int = DEFAULT_TOP_K,
        fetch_k: int = DEFAULT_FETCH_K,
        lambda_mult: float = DEFAULT_LAMBDA,
    ) -> list[ScoredChunk]:
        """similarity_search(fetch_k) then mmr_select(k): the retrieval contract."""
        if fetch_k < k:
            raise ValueError("fetch_k must be at least k")
        candidates = self.similarity_search(query_vector, fetch_k=fetch_k)
        return mmr_select(query_vector, candidates, k=k, lambda_mult=lambda_mult)


class ReadinessMonitor:
    """Background poller tracking whether the store can serve queries.

    Polls check_ready() every interval seconds so health reporting flips to
    degraded soon after the index disappears and back within a few seconds of
    it returning.
    """

    def __init__(self, store: VectorStore, interval: float = 2.0):
        if interval <= 0 or interval > 2.0:
            raise ValueError("interval must be in (0, 2] seconds")
        self.store = store
        self.interval = interval
        self._ready = False
        self._last_error: str | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.probe()

    def probe(self) -> bool:
        try:
            self.store.check_ready()
        except VectorStoreError as exc:
            self._ready = False
            self._last_error = str(exc)
        else:
            self._ready = True
            self._last_error = None
        return self._ready

    @property
    def ready(self) -> bool:
        return self._ready

    @property
    def last_error(self) -> str | None:
        return self._last_error

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="index-readiness", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            self.probe()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
