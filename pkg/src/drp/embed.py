"""Text embeddings and mean-pooled user profile vectors."""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .corpus import UserHistory
from .errors import EmptyHistory, EmptyText, ProviderError, ZeroVector
from .metrics import tokenize


class EmbeddingProvider(Protocol):
    dim: int

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class UserProfileEmbedding:
    user_id: str
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite values")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


class HashEmbeddingProvider:
    """Deterministic offline embedder.

    Unigram and bigram token features are hashed (blake2b keyed by ``seed``)
    into ``dim`` signed buckets. Texts with no word tokens fall back to
    character trigrams. Output is L2-normalized.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    def _features(self, text: str) -> list[str]:
        toks = tokenize(text)
        if toks:
            return [f"u:{t}" for t in toks] + [f"b:{a} {b}" for a, b in zip(toks, toks[1:])]
        s = text.strip()
        return [f"c:{s[i:i + 3]}" for i in range(max(1, len(s) - 2))]

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        v = np.zeros(self.dim)
        for feat in self._features(text):
            h = hashlib.blake2b(feat.encode("utf-8"), digest_size=8, key=self._key).digest()
            n = int.from_bytes(h, "little")
            v[n % self.dim] += 1.0 if (n >> 63) & 1 else -1.0
        return normalize(v)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts]) if texts else np.zeros((0, self.dim))


class StubEmbeddingProvider:
    """Lookup-table embedder for tests: maps exact texts to fixed vectors."""

    def __init__(self, table: dict[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) != 1:
            raise ValueError("stub vectors must share one dimension")
        self.dim = dims.pop()
        self.calls = 0

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        try:
            return np.stack([self.table[t] for t in texts])
        except KeyError as e:
            raise ProviderError(f"stub has no vector for {e.args[0]!r}") from None


class RemoteEmbeddingProvider:
    """Client for an OpenAI-style ``/v1/embeddings`` endpoint."""

    def __init__(self, base_url: str, model: str, dim: int, timeout_s: float = 60.0,
                 api_key: str | None = None, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        key = api_key if api_key is not None else os.environ.get("DRP_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = self._client.post(
                f"{self.base_url}/v1/embeddings", json={"model": self.model, "input": list(texts)}
            )
        except httpx.HTTPError as e:
            raise ProviderError(f"embedding request failed: {e}") from e
        if resp.status_code != 200:
            raise ProviderError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            data = resp.json()["data"]
            if "index" in data[0]:
                data = sorted(data, key=lambda d: d["index"])
            out = np.asarray([d["embedding"] for d in data], dtype=np.float64)
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError(f"malformed embeddings response: {e}") from e
        if out.shape != (len(texts), self.dim):
            raise ProviderError(f"expected shape {(len(texts), self.dim)}, got {out.shape}")
        return out


def embed_text(text: str, provider: EmbeddingProvider) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    v = np.asarray(provider.embed_many([text])[0], dtype=np.float64)
    if v.shape != (provider.dim,) or not all(math.isfinite(x) for x in v):
        raise ProviderError("provider returned a malformed vector")
    return v


def profile_embedding(history: UserHistory, provider: EmbeddingProvider) -> UserProfileEmbedding:
    """L2-normalized mean of the user's review embeddings."""
    if len(history) == 0:
        raise EmptyHistory(f"user {history.user_id!r} has no history")
    # sort texts so the float summation order is independent of history order
    texts = sorted(s.review_text for s in history.samples)
    vecs = np.asarray(provider.embed_many(texts), dtype=np.float64)
    mean = vecs.sum(axis=0) / len(texts)
    if np.allclose(mean, 0.0, atol=1e-15):
        raise ZeroVector(f"mean embedding of user {history.user_id!r} is zero")
    return UserProfileEmbedding(history.user_id, normalize(mean))


def make_provider(kind: str = "hash", dim: int = 64, seed: int = 0, base_url: str | None = None,
                  model: str = "", timeout_s: float = 60.0) -> EmbeddingProvider:
    if kind == "hash":
        return HashEmbeddingProvider(dim=dim, seed=seed)
    if kind == "remote":
        if not base_url:
            raise ValueError("remote embedding provider requires base_url")
        return RemoteEmbeddingProvider(base_url, model, dim, timeout_s)
    raise ValueError(f"unknown embedding provider kind {kind!r}")
