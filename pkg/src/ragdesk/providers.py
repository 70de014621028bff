"""Chat-model providers: the transport abstraction and its implementations.

Every LLM call in the pipeline goes through ChatProvider, so tests swap in
scripted doubles and offline deployments can run the extractive provider
instead of a remote model. Role configuration (temperature, token budget,
streaming) lives beside the provider, not inside it; the answering and
condensing roles may share one transport with different budgets.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import httpx

QA_TEMPERATURE = 0.0
QA_MAX_TOKENS = 8192
CONDENSE_TEMPERATURE = 0.0
CONDENSE_MAX_TOKENS = 512


class ProviderError(Exception):
    """A chat provider failed to produce a usable response."""


class ChatProvider:
    """Interface for one chat model endpoint.

    complete() returns the full text; stream() yields text deltas whose
    concatenation must equal complete() for a deterministic provider.
    """

    model_id: str

    def complete(self, system_text: str, user_text: str, *, temperature: float, max_tokens: int) -> str:
        raise NotImplementedError

    def stream(
        self, system_text: str, user_text: str, *, temperature: float, max_tokens: int
    ) -> Iterator[str]:
        raise NotImplementedError


@dataclass(frozen=True)
class RoleConfig:
    """One pipeline role: a provider plus its fixed generation settings."""

    provider: ChatProvider
    temperature: float
    max_tokens: int
    streaming: bool


@dataclass(frozen=True)
class LlmRoles:
    qa: RoleConfig
    condense: RoleConfig


def default_roles(qa_provider: ChatProvider, condense_provider: ChatProvider) -> LlmRoles:
    """Standard two-role wiring: deterministic answering, short condensing."""
    return LlmRoles(
        qa=RoleConfig(qa_provider, temperature=QA_TEMPERATURE, max_tokens=QA_MAX_TOKENS, streaming=True),
        condense=RoleConfig(
            condense_provider,
            temperature=CONDENSE_TEMPERATURE,
            max_tokens=CONDENSE_MAX_TOKENS,
            streaming=False,
        ),
    )


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Crude token bound for local providers: whitespace-delimited words."""
    pieces = re.findall(r"\S+\s*", text)
    if len(pieces) <= max_tokens:
        return text
    return "".join(pieces[:max_tokens]).rstrip()


@dataclass
class ProviderCall:
    system_text: str
    user_text: str
    temperature: float
    max_tokens: int
    stream: bool


class ScriptedChatProvider(ChatProvider):
    """Deterministic test double replaying a fixed script of responses.

    Each script entry is one of:
      - str: the full response text (streamed as a single delta)
      - sequence of str: streamed as those exact deltas
      - Exception: raised when the entry is consumed
      - callable(user_text) -> str: computed response

    Responses are consumed in call order; running past the end raises, which
    makes an unexpected extra LLM call a loud test failure. Every call is
    recorded on .calls for instrumentation.
    """

    def __init__(self, script: Sequence[object], model_id: str = "scripted"):
        self.model_id = model_id
        self._script = list(script)
        self._cursor = 0
        self.calls: list[ProviderCall] = []

    def _next(self, user_text: str) -> str | list[str]:
        if self._cursor >= len(self._script):
            raise ProviderError(f"scripted provider {self.model_id}: script exhausted after {self._cursor} calls")
        entry = self._script[self._cursor]
        self._cursor += 1
        if isinstance(entry, Exception):
            raise entry
        if callable(entry):
            return entry(user_text)
        if isinstance(entry, str):
            return entry
        return [str(d) for d in entry]

    def complete(self, system_text: str, user_text: str, *, temperature: float, max_tokens: int) -> str:
        self.calls.append(ProviderCall(system_text, user_text, temperature, max_tokens, stream=False))
        entry = self._next(user_text)
        text = entry if isinstance(entry, str) else "".join(entry)
        return truncate_to_tokens(text, max_tokens)

    def stream(
        self, system_text: str, user_text: str, *, temperature: float, max_tokens: int
    ) -> Iterator[str]:
        self.calls.append(ProviderCall(system_text, user_text, temperature, max_tokens, stream=True))
        entry = self._next(user_text)
        deltas = [entry] if isinstance(entry, str) else list(entry)
        budget = truncate_to_tokens("".join(deltas), max_tokens)
        emitted = 0
        for delta in deltas:
            if emitted >= len(budget):
                break
            piece = delta[: len(budget) - emitted]
            emitted += len(piece)
            if piece:
                yield piece


CONTEXT_BLOCK_RE = re.compile(r"^\[Source: (?P<title>[^\]]+)\]\n", re.MULTILINE)
CLASSIFIER_MARK = "Reply with exactly ON_TOPIC or OFF_TOPIC"
CONDENSE_MARK = "Rewrite the final user question as one standalone question"


class ExtractiveChatProvider(ChatProvider):
    """Offline stand-in for a real model, good enough for demos and smoke runs.

    Answering: quotes the lead of each context block and cites it. The
    classifier and condense prompts produced by the pipeline are recognized
    by their fixed instruction lines and handled with small heuristics.
    """

    def __init__(self, model_id: str = "extractive-local", max_blocks: int = 2, lead_chars: int = 300):
        self.model_id = model_id
        self.max_blocks = max_blocks
        self.lead_chars = lead_chars

    def complete(self, system_text: str, user_text: str, *, temperature: float, max_tokens: int) -> str:
        if CLASSIFIER_MARK in system_text:
            return self._classify(system_text, user_text)
        if CONDENSE_MARK in system_text:
            return self._condense(user_text)
        return truncate_to_tokens(self._answer(system_text), max_tokens)

    def stream(
        self, system_text: str, user_text: str, *, temperature: float, max_tokens: int
    ) -> Iterator[str]:
        text = self.complete(system_text, user_text, temperature=temperature, max_tokens=max_tokens)
        # paragraph-sized deltas give the UI something to render progressively
        for i in range(0, len(text), 120):
            yield text[i : i + 120]

    def _classify(self, system_text: str, user_text: str) -> str:
        message = user_text.lower()
        for line in system_text.splitlines():
            match = re.match(r"- (?P<label>[a-z0-9-]+): (?P<hints>.+)$", line.strip())
            if not match:
                continue
            for hint in match.group("hints").split("; "):
                hint = hint.strip().lower()
                if hint and hint in message:
                    return f"OFF_TOPIC: {match.group('label')}"
        return "ON_TOPIC"

    def _condense(self, user_text: str) -> str:
        # last non-empty line of the transcript is the follow-up itself
        for line in reversed(user_text.splitlines()):
            if line.strip():
                return re.sub(r"^(user|assistant):\s*", "", line.strip(), flags=re.IGNORECASE)
        return user_text.strip()

    def _answer(self, system_text: str) -> str:
        matches = list(CONTEXT_BLOCK_RE.finditer(system_text))
        if not matches:
            return "I could not find anything relevant in the documentation for that."
        parts = []
        for i, m in enumerate(matches[: self.max_blocks]):
            end = matches[i + 1].start() if i + 1 < len(matches) else len(system_text)
            body = system_text[m.end() : end].strip()
            lead = body[: self.lead_chars].rsplit(" ", 1)[0] if len(body) > self.lead_chars else body
            parts.append(f"{lead} [Source: {m.group('title')}]")
        return "\n\n".join(parts)


class HttpChatProvider(ChatProvider):
    """Client for an OpenAI-style /chat/completions endpoint.

    Streaming parses text/event-stream data lines; the terminal [DONE]
    sentinel closes the stream. Transport is injectable for tests.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str | None = None,
        *,
        timeout: float = 300.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model_id = model_id
        self._endpoint = endpoint.rstrip("/")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def _payload(self, system_text: str, user_text: str, temperature: float, max_tokens: int) -> dict:
        return {
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }

    def complete(self, system_text: str, user_text: str, *, temperature: float, max_tokens: int) -> str:
        try:
            response = self._client.post(
                f"{self._endpoint}/chat/completions",
                json=self._payload(system_text, user_text, temperature, max_tokens),
            )
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat completion failed: {exc}") from exc

    def stream(
        self, system_text: str, user_text: str, *, temperature: float, max_tokens: int
    ) -> Iterator[str]:
        payload = self._payload(system_text, user_text, temperature, max_tokens)
        payload["stream"] = True
        try:
            with self._client.stream(
                "POST", f"{self._endpoint}/chat/completions", json=payload
            ) as response:
                response.raise_for_status()
                for line in response.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:"):].strip()
                    if data == "[DONE]":
                        return
                    try:
                        delta = json.loads(data)["choices"][0].get("delta", {}).get("content")
                    except (KeyError, IndexError, ValueError) as exc:
                        raise ProviderError(f"malformed stream chunk: {exc}") from exc
                    if delta:
                        yield delta
        except httpx.HTTPError as exc:
            raise ProviderError(f"chat stream failed: {exc}") from exc

    def close(self) -> None:
        self._client.close()
