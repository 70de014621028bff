"""HTTP surface: REST endpoints, the SSE chat stream, limits, health.

Every response carries the security headers. Body-size and rate-limit checks
run in ASGI middleware before any route logic, so an oversized or over-quota
request never reaches the pipeline. The chat stream emits accumulated-text
message frames, one done or error frame, then exactly three flush comments.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass
from typing import AsyncIterator, Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .chatstore import (
    ChatStore,
    ChatValidationError,
    ExchangeConflictError,
    NoCompletedExchangeError,
    SessionNotFoundError,
    ThreadCapExceededError,
    ThreadNotFoundError,
)
from .pipeline import (
    GENERATION_FAILED_MESSAGE,
    AnswerDelta,
    AnswerDone,
    AnswerError,
    AnswerPipeline,
)
from .ratelimit import SlidingWindowLimiter
from .vectorstore import ReadinessMonitor

logger = logging.getLogger(__name__)

MAX_BODY_BYTES = 65_536
MAX_MESSAGE_CHARS = 10_000
FLUSH_COMMENT_COUNT = 3
FLUSH_FRAME = b": flush\n\n"

SECURITY_HEADERS = {
    b"strict-transport-security": b"max-age=31536000; includeSubDomains",
    b"x-content-type-options": b"nosniff",
    b"x-frame-options": b"DENY",
}


@dataclass
class ServerState:
    """Everything the routes need, assembled once at startup."""

    chat: ChatStore
    pipeline: AnswerPipeline
    monitor: ReadinessMonitor
    chat_limiter: SlidingWindowLimiter
    feedback_limiter: SlidingWindowLimiter
    max_body_bytes: int = MAX_BODY_BYTES
    max_message_chars: int = MAX_MESSAGE_CHARS
    stream_timeout_seconds: float = 300.0
    trusted_proxy_header: str | None = None
    csp: str = "default-src 'self'"
    clock: Callable[[], float] = time.monotonic


def _is_chat_class(method: str, path: str) -> bool:
    if method != "POST":
        return False
    return (
        path == "/api/session"
        or (path.startswith("/api/session/") and path.endswith("/thread"))
        or path == "/api/chat"
    )


def _is_feedback_class(method: str, path: str) -> bool:
    return method == "POST" and path == "/api/feedback"


class GuardMiddleware:
    """Pure ASGI wrapper: security headers, body cap, rate limiting.

    Implemented below FastAPI routing so its rejections bypass route code
    entirely and streaming responses pass through unbuffered.
    """

    def __init__(self, app, state: ServerState):
        self.app = app
        self.state = state

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return

        async def send_with_headers(message):
            if message["type"] == "http.response.start":
                headers = list(message.get("headers", []))
                headers.append((b"content-security-policy", self.state.csp.encode("latin-1")))
                for name, value in SECURITY_HEADERS.items():
                    headers.append((name, value))
                message = {**message, "headers": headers}
            await send(message)

        method = scope["method"]
        path = scope["path"]

        declared = self._content_length(scope)
        if declared is not None and declared > self.state.max_body_bytes:
            await self._reject(send_with_headers, 413, "request body too large")
            return

        decision = None
        if _is_chat_class(method, path):
            decision = self.state.chat_limiter.check(self._client_key(scope))
        elif _is_feedback_class(method, path):
            decision = self.state.feedback_limiter.check(self._client_key(scope))
        if decision is not None and not decision.allowed:
            await self._reject(
                send_with_headers,
                429,
                "rate limit exceeded",
                extra_headers=[(b"retry-after", str(decision.retry_after).encode("latin-1"))],
            )
            return

        await self.app(scope, receive, send_with_headers)

    def _content_length(self, scope) -> int | None:
        for name, value in scope.get("headers", []):
            if name == b"content-length":
                try:
                    return int(value)
                except ValueError:
                    return None
        return None

    def _client_key(self, scope) -> str:
        header = self.state.trusted_proxy_header
        if header:
            wanted = header.lower().encode("latin-1")
            for name, value in scope.get("headers", []):
                if name == wanted:
                    first = value.decode("latin-1").split(",")[0].strip()
                    if first:
                        return first
        client = scope.get("client")
        return client[0] if client else "unknown"

    async def _reject(self, send, status: int, detail: str, extra_headers=None):
        body = json.dumps({"detail": detail}).encode("utf-8")
        headers = [
            (b"content-type", b"application/json"),
            (b"content-length", str(len(body)).encode("latin-1")),
        ]
        if extra_headers:
            headers.extend(extra_headers)
        await send({"type": "http.response.start", "status": status, "headers": headers})
        await send({"type": "http.response.body", "body": body})


def sse_frame(event: str, payload: dict) -> bytes:
    return f"event: {event}\ndata: {json.dumps(payload)}\n\n".encode("utf-8")


def _error_payload(message: str, message_id: str | None) -> dict:
    return {"message": message, "message_id": message_id, "status": "interrupted"}


async def _read_json_body(request: Request, max_bytes: int) -> dict:
    body = await request.body()
    if len(body) > max_bytes:
        raise _HttpError(413, "request body too large")
    try:
        parsed = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise _HttpError(422, "body must be a JSON object") from None
    if not isinstance(parsed, dict):
        raise _HttpError(422, "body must be a JSON object")
    return parsed


class _HttpError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail


def create_app(state: ServerState, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(openapi_url=None, docs_url=None, redoc_url=None)
    app.state.server_state = state

    @app.exception_handler(_HttpError)
    async def _handle(_request: Request, exc: _HttpError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.post("/api/session")
    async def create_session():
        token = await asyncio.to_thread(state.chat.create_session)
        return {"session_id": token}

    @app.post("/api/session/{session_id}/thread")
    async def create_thread(session_id: str):
        try:
            thread_id = await asyncio.to_thread(state.chat.create_thread, session_id)
        except SessionNotFoundError:
            raise _HttpError(404, "unknown session") from None
        except ThreadCapExceededError:
            raise _HttpError(409, "thread limit reached for this session") from None
        return {"thread_id": thread_id}

    @app.post("/api/chat")
    async def chat(request: Request):
        body = await _read_json_body(request, state.max_body_bytes)
        session_id = body.get("session_id")
        thread_id = body.get("thread_id")
        message = body.get("message")
        if not isinstance(session_id, str) or not isinstance(thread_id, str):
            raise _HttpError(422, "session_id and thread_id are required")
        if not isinstance(message, str) or not message.strip():
            raise _HttpError(422, "message must be a non-empty string")
        if len(message) > state.max_message_chars:
            raise _HttpError(422, f"message exceeds {state.max_message_chars} characters")

        try:
            info = await asyncio.to_thread(state.chat.get_thread, thread_id)
        except ThreadNotFoundError:
            raise _HttpError(404, "unknown thread") from None
        if info.session_id != session_id:
            raise _HttpError(404, "unknown thread")

        # transaction one happens before the stream starts, so its failures
        # still map to plain HTTP statuses
        try:
            user_message_id = await asyncio.to_thread(state.chat.begin_exchange, thread_id, message)
        except ChatValidationError as exc:
            raise _HttpError(422, str(exc)) from None
        except ExchangeConflictError:
            raise _HttpError(409, "thread is awaiting a reply") from None
        except ThreadNotFoundError:
            raise _HttpError(404, "unknown thread") from None

        stream = _chat_event_stream(state, thread_id, user_message_id, message)
        return StreamingResponse(
            stream,
            media_type="text/event-stream",
            headers={"cache-control": "no-cache", "x-accel-buffering": "no"},
        )

    @app.post("/api/feedback")
    async def feedback(request: Request):
        body = await _read_json_body(request, state.max_body_bytes)
        thread_id = body.get("thread_id")
        star_rating = body.get("star_rating")
        comment = body.get("comment")
        if not isinstance(thread_id, str):
            raise _HttpError(422, "thread_id is required")
        if isinstance(star_rating, bool) or not isinstance(star_rating, int):
            raise _HttpError(422, "star_rating must be an integer from 1 to 5")
        if comment is not None and not isinstance(comment, str):
            raise _HttpError(422, "comment must be a string")
        try:
            record = await asyncio.to_thread(
                state.chat.record_feedback, thread_id, star_rating, comment
            )
        except ChatValidationError as exc:
            raise _HttpError(422, str(exc)) from None
        except ThreadNotFoundError:
            raise _HttpError(404, "unknown thread") from None
        except NoCompletedExchangeError:
            raise _HttpError(422, "thread has no completed exchange to rate") from None
        return {"feedback_id": record.feedback_id}

    @app.get("/api/health")
    async def health():
        index_ready = state.monitor.ready
        db_ok = await asyncio.to_thread(state.chat.ping)
        status = "ok" if (index_ready and db_ok) else "degraded"
        return {
            "status": status,
            "detail": {
                "index": "ready" if index_ready else f"unavailable: {state.monitor.last_error}",
                "database": "ok" if db_ok else "unreachable",
            },
        }

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    app.add_middleware(GuardMiddleware, state=state)
    return app


async def _chat_event_stream(
    state: ServerState, thread_id: str, user_message_id: str, message: str
) -> AsyncIterator[bytes]:
    """Bridge the synchronous pipeline into SSE frames with a hard deadline."""
    loop = asyncio.get_running_loop()
    queue: asyncio.Queue = asyncio.Queue()
    deadline = state.clock() + state.stream_timeout_seconds
    accumulated = ""

    def worker():
        try:
            for event in state.pipeline.answer_stream(thread_id, user_message_id, message):
                loop.call_soon_threadsafe(queue.put_nowait, event)
        except Exception as exc:  # a pipeline bug must still terminate the stream
            logger.exception("pipeline crashed: %s", exc)
            loop.call_soon_threadsafe(
                queue.put_nowait, AnswerError(GENERATION_FAILED_MESSAGE, partial="", message_id=None)
            )
        finally:
            loop.call_soon_threadsafe(queue.put_nowait, None)

    task = loop.run_in_executor(None, worker)
    try:
        while True:
            remaining = deadline - state.clock()
            if remaining <= 0:
                raise asyncio.TimeoutError
            event = await asyncio.wait_for(queue.get(), timeout=remaining)
            if event is None:
                return
            if isinstance(event, AnswerDelta):
                accumulated = event.accumulated
                yield sse_frame("message", {"content": event.accumulated})
            elif isinstance(event, AnswerDone):
                yield sse_frame(
                    "done",
                    {
                        "citations": [
                            {"doc_id": c.doc_id, "source_title": c.source_title}
                            for c in event.envelope.citations
                        ],
                        "message_id": event.message_id,
                        "status": event.status,
                    },
                )
                for _ in range(FLUSH_COMMENT_COUNT):
                    yield FLUSH_FRAME
                return
            elif isinstance(event, AnswerError):
                yield sse_frame("error", _error_payload(event.message, event.message_id))
                for _ in range(FLUSH_COMMENT_COUNT):
                    yield FLUSH_FRAME
                return
    except asyncio.TimeoutError:
        message_id = None
        try:
            message_id = await asyncio.to_thread(
                state.chat.complete_exchange,
                thread_id,
                user_message_id,
                final_text=accumulated or GENERATION_FAILED_MESSAGE,
                citations=[],
                status="interrupted",
            )
        except Exception as exc:
            # the worker may already have persisted its own terminal state
            logger.warning("timeout persistence raced with the pipeline: %s", exc)
        yield sse_frame("error", _error_payload("generation timed out", message_id))
        for _ in range(FLUSH_COMMENT_COUNT):
            yield FLUSH_FRAME
    finally:
        task.cancel()
