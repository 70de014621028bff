"""Embedding providers and the similarity kernel.

Chunk and query texts are turned into fixed-dimension dense vectors by a
pluggable provider; a hashed-trigram local provider gives deterministic,
network-free vectors for tests and offline runs.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .chunking import ChunkRecord

SECTION_PATH_JOINER = " > "


class EmbeddingError(Exception):
    """Base class for embedding failures."""


class EmbeddingTransportError(EmbeddingError):
    """Transient transport failure talking to a remote provider; retriable."""


class DimensionMismatchError(EmbeddingError):
    """Provider returned a vector that violates its declared dimension."""


class EmbeddingProvider(Protocol):
    """Maps batches of texts to equal-length batches of dense vectors."""

    model_id: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@dataclass(frozen=True)
class EmbeddedChunk:
    chunk: ChunkRecord
    vector: np.ndarray
    model_id: str


def embedding_text(chunk: ChunkRecord) -> str:
    """Text actually embedded: section path prefix plus the chunk body.

    The prefix improves retrieval of short chunks; it is never part of the
    cited display text.
    """
    if chunk.section_path:
        return SECTION_PATH_JOINER.join(chunk.section_path) + "\n\n" + chunk.text
    return chunk.text


def _check_vector(vector: object, provider: EmbeddingProvider) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.shape != (provider.dimension,):
        raise DimensionMismatchError(
            f"provider {provider.model_id} returned shape {arr.shape}, "
            f"expected ({provider.dimension},)"
        )
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatchError(f"provider {provider.model_id} returned non-finite components")
    return arr


def embed_chunks(
    provider: EmbeddingProvider,
    chunks: Sequence[ChunkRecord],
    batch_size: int = 64,
) -> list[EmbeddedChunk]:
    """Embed chunks in order-preserving batches; any failure fails the build."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    out: list[EmbeddedChunk] = []
    for start in range(0, len(chunks), batch_size):
        batch = chunks[start : start + batch_size]
        texts = [embedding_text(c) for c in batch]
        vectors = provider.embed(texts)
        if len(vectors) != len(texts):
            raise DimensionMismatchError(
                f"provider {provider.model_id} returned {len(vectors)} vectors for {len(texts)} texts"
            )
        for chunk, vector in zip(batch, vectors):
            out.append(EmbeddedChunk(chunk=chunk, vector=_check_vector(vector, provider), model_id=provider.model_id))
    return out


def embed_query(provider: EmbeddingProvider, query: str) -> np.ndarray:
    """Single query vector; query and chunks must share one provider."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    vectors = provider.embed([query])
    if len(vectors) != 1:
        raise DimensionMismatchError(f"provider {provider.model_id} returned {len(vectors)} vectors for 1 text")
    return _check_vector(vectors[0], provider)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a,b) / (|a||b|), clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(float(a @ b) / (norm_a * norm_b), -1.0, 1.0))


class HashedTrigramEmbedder:
    """Deterministic local provider: character trigrams hashed into buckets.

    Texts are padded with sentinel boundary characters so even one-character
    inputs produce a nonzero vector; bucket counts are L2-normalized.
    """

    def __init__(self, dimension: int = 256, model_id: str = "local-trigram-v1"):
        if dimension < 8:
            raise ValueError("dimension must be at least 8")
        self.dimension = dimension
        self.model_id = model_id

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        padded = f"\x02{text}\x03"
        vec = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(padded) - 2):
            bucket = zlib.crc32(padded[i : i + 3].encode("utf-8")) % self.dimension
            vec[bucket] += 1.0
        return vec / np.linalg.norm(vec)


class HttpEmbeddingProvider:
    """OpenAI-compatible /embeddings client with bounded retries.

    Transport failures are retried 3 times with 1s/2s/4s backoff; anything
    still failing surfaces as EmbeddingTransportError.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_SECONDS = (1.0, 2.0, 4.0)

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        dimension: int,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model_id = model_id
        self.dimension = dimension
        self._endpoint = endpoint.rstrip("/")
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        last_error: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                self._sleep(self.BACKOFF_SECONDS[attempt - 1])
            try:
                response = self._client.post(
                    f"{self._endpoint}/embeddings",
                    json={"model": self.model_id, "input": list(texts)},
                )
                response.raise_for_status()
                payload = response.json()
                rows = sorted(payload["data"], key=lambda r: r["index"])
                vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
                for v in vectors:
                    if v.shape != (self.dimension,):
                        raise EmbeddingError(
                            f"remote model returned shape {v.shape}, expected ({self.dimension},)"
                        )
                return vectors
            except httpx.HTTPStatusError as exc:
                if exc.response.status_code < 500:
                    raise EmbeddingError(
                        f"embedding request rejected: {exc.response.status_code}"
                    ) from exc
                last_error = exc
            except httpx.TransportError as exc:
                last_error = exc
            except (KeyError, ValueError, TypeError) as exc:
                raise EmbeddingError(f"malformed embedding response: {exc}") from exc
        raise EmbeddingTransportError(f"embedding request failed after {self.MAX_ATTEMPTS} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()
