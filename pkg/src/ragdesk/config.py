"""Application configuration and object wiring.

One JSON file describes a deployment; every knob has a default so an empty
config runs a fully local stack (trigram embedder, extractive provider,
SQLite). Remote providers fail fast at startup when their credential is
missing rather than at the first user request.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .chatstore import ChatStore, make_engine
from .embedding import EmbeddingProvider, HashedTrigramEmbedder, HttpEmbeddingProvider
from .pipeline import AnswerPipeline, Metrics, RetrievalParams
from .policy import PolicyManager
from .providers import (
    ChatProvider,
    ExtractiveChatProvider,
    HttpChatProvider,
    LlmRoles,
    default_roles,
)
from .ratelimit import CHAT_CLASS_LIMIT, FEEDBACK_CLASS_LIMIT, SlidingWindowLimiter
from .server import MAX_BODY_BYTES, MAX_MESSAGE_CHARS, ServerState, create_app
from .vectorstore import FileStorage, ReadinessMonitor, SqlStorage, VectorStore


class ConfigError(Exception):
    """Configuration file invalid or incomplete for the selected mode."""


@dataclass(frozen=True)
class ProviderSettings:
    kind: str = "extractive"  # "extractive" | "http"
    endpoint: str = ""
    qa_model: str = ""
    condense_model: str = ""
    api_key_env: str = "RAGDESK_API_KEY"


@dataclass(frozen=True)
class EmbedderSettings:
    kind: str = "trigram"  # "trigram" | "http"
    dimension: int = 256
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "RAGDESK_API_KEY"


@dataclass(frozen=True)
class LimitSettings:
    max_body_bytes: int = MAX_BODY_BYTES
    max_message_chars: int = MAX_MESSAGE_CHARS
    chat_requests_per_minute: int = CHAT_CLASS_LIMIT
    feedback_requests_per_minute: int = FEEDBACK_CLASS_LIMIT
    stream_timeout_seconds: float = 300.0


@dataclass(frozen=True)
class AppConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    corpus_dir: str = "corpus"
    index_dir: str = "index"
    index_backend: str = "file"  # "file" | "sql"
    db_url: str = "sqlite:///ragdesk.db"
    policy_path: str | None = None
    static_dir: str | None = None
    trusted_proxy_header: str | None = None
    csp: str = "default-src 'self'"
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    embedder: EmbedderSettings = field(default_factory=EmbedderSettings)
    limits: LimitSettings = field(default_factory=LimitSettings)
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)

    def validate(self) -> None:
        if self.provider.kind not in ("extractive", "http"):
            raise ConfigError(f"unknown provider kind {self.provider.kind!r}")
        if self.embedder.kind not in ("trigram", "http"):
            raise ConfigError(f"unknown embedder kind {self.embedder.kind!r}")
        if self.index_backend not in ("file", "sql"):
            raise ConfigError(f"unknown index backend {self.index_backend!r}")
        if self.provider.kind == "http":
            if not self.provider.endpoint:
                raise ConfigError("provider.endpoint is required for the http provider")
            if not os.environ.get(self.provider.api_key_env):
                raise ConfigError(
                    f"environment variable {self.provider.api_key_env} must hold the provider "
                    "credential when provider.kind is http"
                )
        if self.embedder.kind == "http":
            if not self.embedder.endpoint:
                raise ConfigError("embedder.endpoint is required for the http embedder")
            if not os.environ.get(self.embedder.api_key_env):
                raise ConfigError(
                    f"environment variable {self.embedder.api_key_env} must hold the embedding "
                    "credential when embedder.kind is http"
                )


def _build(cls, raw: dict, path_hint: str):
    known = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {path_hint}: {', '.join(sorted(unknown))}")
    return cls(**raw)


def parse_config(text: str) -> AppConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    nested = {}
    for key, cls in (("provider", ProviderSettings), ("embedder", EmbedderSettings),
                     ("limits", LimitSettings), ("retrieval", RetrievalParams)):
        if key in raw:
            section = raw.pop(key)
            if not isinstance(section, dict):
                raise ConfigError(f"{key} must be a JSON object")
            nested[key] = _build(cls, section, key)

    config = _build(AppConfig, {**raw, **nested}, "config")
    config.validate()
    return config


def load_config(path: Path | str | None) -> AppConfig:
    if path is None:
        config = AppConfig()
        config.validate()
        return config
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


# -- builders -----------------------------------------------------------------

def build_embedder(config: AppConfig) -> EmbeddingProvider:
    if config.embedder.kind == "trigram":
        return HashedTrigramEmbedder(dimension=config.embedder.dimension)
    return HttpEmbeddingProvider(
        endpoint=config.embedder.endpoint,
        model_id=config.embedder.model or "embedding-model",
        dimension=config.embedder.dimension,
        api_key=os.environ.get(config.embedder.api_key_env),
    )


def build_roles(config: AppConfig) -> LlmRoles:
    if config.provider.kind == "extractive":
        provider: ChatProvider = ExtractiveChatProvider()
        return default_roles(provider, provider)
    api_key = os.environ.get(config.provider.api_key_env)
    qa = HttpChatProvider(config.provider.endpoint, config.provider.qa_model or "qa-model", api_key)
    condense = HttpChatProvider(
        config.provider.endpoint, config.provider.condense_model or config.provider.qa_model or "qa-model",
        api_key,
    )
    return default_roles(qa, condense)


def build_vector_store(config: AppConfig) -> VectorStore:
    if config.index_backend == "sql":
        return VectorStore(SqlStorage(make_engine(config.db_url)))
    return VectorStore(FileStorage(Path(config.index_dir)))


def build_server_state(
    config: AppConfig,
    *,
    store: VectorStore | None = None,
    chat: ChatStore | None = None,
    roles: LlmRoles | None = None,
    embedder: EmbeddingProvider | None = None,
) -> ServerState:
    store = store or build_vector_store(config)
    chat = chat or ChatStore(make_engine(config.db_url))
    policy_manager = PolicyManager(config.policy_path)
    pipeline = AnswerPipeline(
        store=store,
        embedder=embedder or build_embedder(config),
        roles=roles or build_roles(config),
        policy_manager=policy_manager,
        chat=chat,
        retrieval=config.retrieval,
        metrics=Metrics(),
        timeout_seconds=config.limits.stream_timeout_seconds,
    )
    monitor = ReadinessMonitor(store)
    return ServerState(
        chat=chat,
        pipeline=pipeline,
        monitor=monitor,
        chat_limiter=SlidingWindowLimiter(config.limits.chat_requests_per_minute),
        feedback_limiter=SlidingWindowLimiter(config.limits.feedback_requests_per_minute),
        max_body_bytes=config.limits.max_body_bytes,
        max_message_chars=config.limits.max_message_chars,
        stream_timeout_seconds=config.limits.stream_timeout_seconds,
        trusted_proxy_header=config.trusted_proxy_header,
        csp=config.csp,
    )


def build_app(config: AppConfig):
    state = build_server_state(config)
    return create_app(state, static_dir=config.static_dir)
