"""Key-history retrieval: the slice of a user's history used as context."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import ReviewSample, UserHistory
from .embed import EmbeddingProvider
from .errors import EmptyHistory, ProviderError

MODES = ("similarity", "recency")


@dataclass(frozen=True)
class RetrievedHistory:
    user_id: str
    entries: tuple[tuple[ReviewSample, float], ...]
    k_requested: int
    query_text: str

    @property
    def samples(self) -> list[ReviewSample]:
        return [s for s, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def item_query(item_title: str, item_description: str = "") -> str:
    return f"{item_title} {item_description}".strip()


def _cosines(query: np.ndarray, docs: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(query)
    dn = np.linalg.norm(docs, axis=1)
    if qn == 0 or np.any(dn == 0):
        raise ProviderError("zero embedding cannot be compared by cosine")
    return (docs @ query) / (dn * qn)


def retrieve_key_history(history: UserHistory, query_text: str, k: int = 4,
                         mode: str = "similarity",
                         provider: Optional[EmbeddingProvider] = None) -> RetrievedHistory:
    """Top-k history samples by cosine to the query, or by recency.

    Ordering is score desc, then timestamp desc, then item_id asc.
    """
    if len(history) == 0:
        raise EmptyHistory(f"user {history.user_id!r} has no history")
    if k < 1:
        raise ValueError("k must be >= 1")
    samples = list(history.samples)
    if mode == "similarity":
        if provider is None:
            raise ValueError("similarity retrieval needs an embedding provider")
        if not query_text.strip():
            raise ValueError("similarity retrieval needs a nonempty query")
        vecs = np.asarray(provider.embed_many([query_text] + [s.review_text for s in samples]),
                          dtype=np.float64)
        scores = [float(x) for x in _cosines(vecs[0], vecs[1:])]
    elif mode == "recency":
        scores = [float(s.timestamp) for s in samples]
    else:
        raise ValueError(f"unknown retrieval mode {mode!r}")
    ranked = sorted(zip(samples, scores), key=lambda e: (-e[1], -e[0].timestamp, e[0].item_id))
    return RetrievedHistory(history.user_id, tuple(ranked[:k]), k, query_text)
