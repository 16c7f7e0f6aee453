"""K-means over user profile vectors and cross-cluster representative picking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import UserProfileEmbedding
from .errors import DimensionMismatch, InsufficientUsers, TooFewPoints, UnknownUser


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, dim)
    assignment: dict[str, int]
    inertia: float
    seed: int
    vectors: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    inertia_history: list[float] = field(repr=False, default_factory=list)
    n_iter: int = 0

    def members(self, cluster: int) -> list[str]:
        return sorted(u for u, c in self.assignment.items() if c == cluster)

    def to_dict(self) -> dict:
        users = sorted(self.assignment)
        return {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "n_iter": self.n_iter,
            "centroids": self.centroids.tolist(),
            "assignment": {u: self.assignment[u] for u in users},
            "vectors": {u: self.vectors[u].tolist() for u in users if u in self.vectors},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        return cls(
            k=d["k"],
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            assignment={u: int(c) for u, c in d["assignment"].items()},
            inertia=float(d["inertia"]),
            seed=d["seed"],
            vectors={u: np.asarray(v, dtype=np.float64) for u, v in d.get("vectors", {}).items()},
            n_iter=d.get("n_iter", 0),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. ties go to the lowest index
    return np.argmin(squared_distances(x, centroids), axis=1)


def inertia_of(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    d = x - centroids[labels]
    return float(np.einsum("nd,nd->n", d, d).sum())


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = squared_distances(x, np.asarray(centroids)).min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centroids
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids.append(x[idx])
    return np.array(centroids, dtype=np.float64)


def _repair_empty(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> None:
    """Move the point farthest from its centroid into each empty cluster (in place)."""
    k = centroids.shape[0]
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        d = x - centroids[labels]
        d2 = np.einsum("nd,nd->n", d, d)
        d2[counts[labels] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(d2))
        labels[far] = j
        centroids[j] = x[far]


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iters: int, tol: float):
    centroids = kmeans_pp_init(x, k, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        labels = assign(x, centroids)
        _repair_empty(x, centroids, labels)
        history.append(inertia_of(x, centroids, labels))
        new = np.array([x[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break
    labels = assign(x, centroids)
    _repair_empty(x, centroids, labels)
    final = inertia_of(x, centroids, labels)
    history.append(final)
    return centroids, labels, final, history, n_iter


def kmeans_fit(points: Sequence[UserProfileEmbedding], k: int, seed: int = 0,
               max_iters: int = 100, tol: float = 1e-8, restarts: int = 10) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` runs by inertia.

    Points are processed in user_id order so input order never matters.
    """
    if k < 1:
        raise TooFewPoints("k must be >= 1")
    if len(points) < k:
        raise TooFewPoints(f"{len(points)} points cannot form {k} clusters")
    points = sorted(points, key=lambda p: p.user_id)
    dims = {p.vector.shape[0] for p in points}
    if len(dims) != 1:
        raise DimensionMismatch(f"profile vectors have dimensions {sorted(dims)}")
    x = np.stack([np.asarray(p.vector, dtype=np.float64) for p in points])
    users = [p.user_id for p in points]

    best = None
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(max(1, restarts))):
        run = _lloyd(x, k, rng, max_iters, tol)
        if best is None or run[2] < best[2]:
            best = run
    centroids, labels, final, history, n_iter = best
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignment={u: int(c) for u, c in zip(users, labels)},
        inertia=final,
        seed=seed,
        vectors=dict(zip(users, x)),
        inertia_history=history,
        n_iter=n_iter,
    )


@dataclass(frozen=True)
class RepresentativeSet:
    target_user: str
    members: tuple[str, ...]

    @property
    def M(self) -> int:
        return len(self.members)


def select_representatives(model: ClusterModel, target_user: str, M: int,
                           seed: int = 0) -> RepresentativeSet:
    """Pick M users round-robin over foreign clusters, centroid-closest first.

    Foreign clusters are visited in ascending index; within a cluster users
    are ranked by squared distance to its centroid, ties by user_id. The rule
    is fully deterministic, so ``seed`` does not change the outcome.
    """
    if target_user not in model.assignment:
        raise UnknownUser(f"user {target_user!r} is not in the cluster model")
    own = model.assignment[target_user]
    queues: list[list[str]] = []
    for c in range(model.k):
        if c == own:
            continue
        users = model.members(c)
        if not users:
            continue
        centroid = model.centroids[c]

        def dist(u: str) -> float:
            d = model.vectors[u] - centroid
            return float(d @ d)

        queues.append(sorted(users, key=lambda u: (dist(u), u)))
    available = sum(len(q) for q in queues)
    if M < 1 or available < M:
        raise InsufficientUsers(f"need {M} representatives, only {available} users outside cluster {own}")
    chosen: list[str] = []
    depth = 0
    while len(chosen) < M:
        for q in queues:
            if depth < len(q):
                chosen.append(q[depth])
                if len(chosen) == M:
                    break
        depth += 1
    return RepresentativeSet(target_user, tuple(chosen))
