"""The question-to-answer cycle.

Order is fixed: topical guardrail, then condensing of follow-ups, query
embedding, diversified retrieval, prompt assembly with the context inside the
system text, streamed generation, and citation extraction. Off-topic messages
short-circuit before any embedding or retrieval work happens.
"""

from __future__ import annotations

import logging
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

from .chatstore import ChatStore, Turn
from .embedding import EmbeddingProvider, embed_query
from .policy import PolicyManager, PolicyPrompt, render_policy_text, screen_response
from .providers import LlmRoles, ProviderError
from .vectorstore import (
    DEFAULT_FETCH_K,
    DEFAULT_LAMBDA,
    DEFAULT_TOP_K,
    ScoredChunk,
    StoreUnavailableError,
    VectorStore,
)

logger = logging.getLogger(__name__)

GENERATION_TIMEOUT_SECONDS = 300.0

DEGRADED_MESSAGE = (
    "The documentation index is temporarily unavailable, so I cannot answer right now. "
    "Please try again in a moment."
)
GENERATION_FAILED_MESSAGE = (
    "Something went wrong while generating this answer. Please try again."
)

ALLOWED_TOPICS = (
    "structure deposition",
    "validation reports",
    "biocuration",
    "archive policies",
    "data formats",
    "structural-biology methods",
    "general greetings",
)

CITATION_RE = re.compile(r"\[Source: ([^\]]+)\]")

GUARDRAIL_CATEGORY_UNAVAILABLE = "guardrail-unavailable"


@dataclass(frozen=True)
class GuardrailVerdict:
    decision: str  # "on_topic" | "off_topic"
    category: str = ""

    @property
    def off_topic(self) -> bool:
        return self.decision == "off_topic"


@dataclass(frozen=True)
class Citation:
    doc_id: str
    source_title: str


@dataclass(frozen=True)
class AnswerEnvelope:
    final_text: str
    citations: tuple[Citation, ...]
    retrieved: tuple[ScoredChunk, ...]
    condensed_question: str
    guardrail: GuardrailVerdict


@dataclass(frozen=True)
class RetrievalParams:
    k: int = DEFAULT_TOP_K
    fetch_k: int = DEFAULT_FETCH_K
    lambda_mult: float = DEFAULT_LAMBDA


class Metrics:
    """Thread-safe counters for policy violations the pipeline observes."""

    def __init__(self):
        self._lock = threading.Lock()
        self.citation_violations = 0
        self.redactions = 0

    def count_citation_violation(self, n: int = 1) -> None:
        with self._lock:
            self.citation_violations += n

    def count_redaction(self, n: int = 1) -> None:
        with self._lock:
            self.redactions += n


# -- guardrail ---------------------------------------------------------------

def guardrail_prompt(policy: PolicyPrompt) -> str:
    lines = [
        "You are the topical gatekeeper for a documentation help desk.",
        "Decide whether the user message below is something the help desk should answer.",
        "ALLOWED topics: " + ", ".join(ALLOWED_TOPICS) + ".",
        "DENIED categories:",
    ]
    for category in policy.forbidden:
        if category.patterns:
            lines.append(f"- {category.label}: {'; '.join(category.patterns)}")
        else:
            lines.append(f"- {category.label}")
    lines.append("Reply with exactly ON_TOPIC or OFF_TOPIC: <category-label>.")
    return "\n".join(lines)


def parse_guardrail_output(raw: str, policy: PolicyPrompt) -> GuardrailVerdict:
    """Strict parse; anything unrecognized fails open to on_topic."""
    head = raw.strip().splitlines()[0].strip() if raw.strip() else ""
    if head.upper() == "ON_TOPIC":
        return GuardrailVerdict("on_topic")
    match = re.match(r"OFF_TOPIC\s*:\s*(?P<label>\S+)\s*$", head, re.IGNORECASE)
    if match:
        label = match.group("label").strip().lower()
        if label in {c.lower() for c in policy.forbidden_labels()}:
            return GuardrailVerdict("off_topic", category=label)
    return GuardrailVerdict("on_topic")


def classify_topicality(message: str, roles: LlmRoles, policy: PolicyPrompt) -> GuardrailVerdict:
    """One condense-provider call; fails open so a broken classifier never blocks users."""
    if not message.strip():
        raise ValueError("message must be non-empty")
    cfg = roles.condense
    try:
        raw = cfg.provider.complete(
            guardrail_prompt(policy),
            message,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
        )
    except Exception as exc:
        logger.warning("guardrail classifier unavailable, failing open: %s", exc)
        return GuardrailVerdict("on_topic", category=GUARDRAIL_CATEGORY_UNAVAILABLE)
    return parse_guardrail_output(raw, policy)


# -- condensing ---------------------------------------------------------------

CONDENSE_SYSTEM = (
    "Rewrite the final user question as one standalone question that needs no "
    "conversation history to understand. Keep every concrete identifier and "
    "constraint from the conversation. Reply with the standalone question only."
)


def render_history(history: Sequence[Turn], followup: str) -> str:
    lines = []
    for turn in history:
        lines.append(f"user: {turn.user_text}")
        lines.append(f"assistant: {turn.assistant_text}")
    lines.append(f"user: {followup}")
    return "\n".join(lines)


def condense_question(history: Sequence[Turn], followup: str, roles: LlmRoles) -> str:
    """Standalone rewrite of a follow-up; first turns pass through untouched."""
    if not followup.strip():
        raise ValueError("followup must be non-empty")
    if not history:
        return followup
    cfg = roles.condense
    try:
        raw = cfg.provider.complete(
            CONDENSE_SYSTEM,
            render_history(history, followup),
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
        )
    except Exception as exc:
        logger.warning("condense failed, retrieving on the raw follow-up: %s", exc)
        return followup
    condensed = raw.strip()
    return condensed if condensed else followup


# -- prompt assembly ----------------------------------------------------------

def assemble_prompt(
    policy: PolicyPrompt, retrieved: Sequence[ScoredChunk], question: str
) -> tuple[str, str]:
    """system_text carries policy plus context; user_text is the bare question."""
    parts = [render_policy_text(policy), "", "CONTEXT"]
    if retrieved:
        for chunk in retrieved:
            parts.append("")
            parts.append(f"[Source: {chunk.source_title}]\n{chunk.text}")
    else:
        parts.append("")
        parts.append(
            "No relevant documentation was found for this question. "
            f'Reply exactly with: "{policy.refusal_text}"'
        )
    return "\n".join(parts), question


# -- generation ---------------------------------------------------------------

@dataclass(frozen=True)
class GenDelta:
    text: str


@dataclass(frozen=True)
class GenDone:
    text: str


@dataclass(frozen=True)
class GenFailed:
    partial: str
    reason: str
    timed_out: bool = False


def generate_answer(
    roles: LlmRoles,
    system_text: str,
    user_text: str,
    *,
    clock: Callable[[], float] = time.monotonic,
    timeout_seconds: float = GENERATION_TIMEOUT_SECONDS,
) -> Iterator[GenDelta | GenDone | GenFailed]:
    """Stream the answer; ends with exactly one GenDone or GenFailed.

    The deadline check runs between deltas, so a provider that stalls inside
    one network read is bounded by the provider timeout, and the server layer
    additionally hard-closes the response stream.
    """
    cfg = roles.qa
    started = clock()
    parts: list[str] = []
    try:
        if cfg.streaming:
            for delta in cfg.provider.stream(
                system_text, user_text, temperature=cfg.temperature, max_tokens=cfg.max_tokens
            ):
                if clock() - started > timeout_seconds:
                    yield GenFailed("".join(parts), "generation timed out", timed_out=True)
                    return
                if delta:
                    parts.append(delta)
                    yield GenDelta(delta)
        else:
            text = cfg.provider.complete(
                system_text, user_text, temperature=cfg.temperature, max_tokens=cfg.max_tokens
            )
            if text:
                parts.append(text)
                yield GenDelta(text)
    except Exception as exc:
        logger.warning("generation failed mid-stream: %s", exc)
        yield GenFailed("".join(parts), str(exc))
        return
    if clock() - started > timeout_seconds:
        yield GenFailed("".join(parts), "generation timed out", timed_out=True)
        return
    yield GenDone("".join(parts))


# -- citations ----------------------------------------------------------------

def extract_citations(
    final_text: str, retrieved: Sequence[ScoredChunk], metrics: Metrics | None = None
) -> list[Citation]:
    """Map inline [Source: <title>] markers back to retrieved documents.

    Unknown titles are dropped and counted as violations; duplicates keep
    their first mention only.
    """
    title_to_doc: dict[str, str] = {}
    for chunk in retrieved:
        title_to_doc.setdefault(chunk.source_title, chunk.doc_id)
    citations: list[Citation] = []
    seen: set[tuple[str, str]] = set()
    for match in CITATION_RE.finditer(final_text):
        title = match.group(1).strip()
        doc_id = title_to_doc.get(title)
        if doc_id is None:
            if metrics is not None:
                metrics.count_citation_violation()
            continue
        key = (doc_id, title)
        if key in seen:
            continue
        seen.add(key)
        citations.append(Citation(doc_id=doc_id, source_title=title))
    return citations


# -- full cycle ---------------------------------------------------------------

@dataclass(frozen=True)
class AnswerDelta:
    accumulated: str


@dataclass(frozen=True)
class AnswerDone:
    envelope: AnswerEnvelope
    message_id: str
    status: str


@dataclass(frozen=True)
class AnswerError:
    message: str
    partial: str
    message_id: str | None
    timed_out: bool = False


class AnswerPipeline:
    """Binds providers, store, policy, and chat persistence into one service.

    answer_stream() assumes the user message is already durable (the caller
    ran begin_exchange first so validation errors surface before streaming
    starts) and always persists an assistant message before finishing, so a
    thread is never left waiting on a reply that will not come.
    """

    def __init__(
        self,
        store: VectorStore,
        embedder: EmbeddingProvider,
        roles: LlmRoles,
        policy_manager: PolicyManager,
        chat: ChatStore,
        *,
        retrieval: RetrievalParams | None = None,
        metrics: Metrics | None = None,
        clock: Callable[[], float] = time.monotonic,
        timeout_seconds: float = GENERATION_TIMEOUT_SECONDS,
    ):
        self.store = store
        self.embedder = embedder
        self.roles = roles
        self.policy_manager = policy_manager
        self.chat = chat
        self.retrieval = retrieval or RetrievalParams()
        self.metrics = metrics or Metrics()
        self._clock = clock
        self._timeout = timeout_seconds

    def answer_stream(
        self, thread_id: str, user_message_id: str, message: str
    ) -> Iterator[AnswerDelta | AnswerDone | AnswerError]:
        policy = self.policy_manager.current
        history = self.chat.history_window(thread_id)

        verdict = classify_topicality(message, self.roles, policy)
        if verdict.off_topic:
            yield from self._finish(
                thread_id,
                user_message_id,
                final_text=policy.refusal_text,
                retrieved=(),
                condensed=message,
                verdict=verdict,
                emit_text=True,
            )
            return

        condensed = condense_question(history, message, self.roles)

        try:
            query_vector = embed_query(self.embedder, condensed)
            retrieved = tuple(
                self.store.retrieve(
                    query_vector,
                    k=self.retrieval.k,
                    fetch_k=self.retrieval.fetch_k,
                    lambda_mult=self.retrieval.lambda_mult,
                )
            )
        except StoreUnavailableError as exc:
            logger.warning("retrieval degraded: %s", exc)
            message_id = self.chat.complete_exchange(
                thread_id, user_message_id, final_text=DEGRADED_MESSAGE, citations=[], status="interrupted"
            )
            yield AnswerError(DEGRADED_MESSAGE, partial="", message_id=message_id)
            return

        system_text, user_text = assemble_prompt(policy, retrieved, condensed)

        accumulated: list[str] = []
        for event in generate_answer(
            self.roles, system_text, user_text, clock=self._clock, timeout_seconds=self._timeout
        ):
            if isinstance(event, GenDelta):
                accumulated.append(event.text)
                yield AnswerDelta("".join(accumulated))
            elif isinstance(event, GenFailed):
                partial = event.partial
                message_id = self.chat.complete_exchange(
                    thread_id,
                    user_message_id,
                    final_text=partial if partial else GENERATION_FAILED_MESSAGE,
                    citations=[],
                    status="interrupted",
                )
                yield AnswerError(
                    GENERATION_FAILED_MESSAGE,
                    partial=partial,
                    message_id=message_id,
                    timed_out=event.timed_out,
                )
                return
            else:
                yield from self._finish(
                    thread_id,
                    user_message_id,
                    final_text=event.text,
                    retrieved=retrieved,
                    condensed=condensed,
                    verdict=verdict,
                    emit_text=False,
                )
                return

    def _finish(
        self,
        thread_id: str,
        user_message_id: str,
        *,
        final_text: str,
        retrieved: tuple[ScoredChunk, ...],
        condensed: str,
        verdict: GuardrailVerdict,
        emit_text: bool,
    ) -> Iterator[AnswerDelta | AnswerDone]:
        screened, redactions = screen_response(self.policy_manager.current, final_text)
        if redactions:
            self.metrics.count_redaction(redactions)
        citations = tuple(extract_citations(screened, retrieved, self.metrics))
        envelope = AnswerEnvelope(
            final_text=screened,
            citations=citations,
            retrieved=retrieved,
            condensed_question=condensed,
            guardrail=verdict,
        )
        if emit_text:
            yield AnswerDelta(screened)
        message_id = self.chat.complete_exchange(
            thread_id,
            user_message_id,
            final_text=screened,
            citations=[(c.doc_id, c.source_title) for c in citations],
            status="complete",
        )
        yield AnswerDone(envelope=envelope, message_id=message_id, status="complete")
