"""Few-shot exemplar selection: manual lists or k-means over embeddings.

Candidates are clustered with seeded k-means++ / Lloyd iterations; exemplars
are drawn one per cluster from the clusters nearest the query, which keeps the
shot set both relevant and diverse.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

STUB_DIM = 32


class SelectionError(ValueError):
    """Raised for invalid exemplar-selection requests."""


def _as_matrix(vectors: Mapping[str, Sequence[float]]) -> tuple[list[str], np.ndarray]:
    ids = sorted(vectors)
    matrix = np.asarray([vectors[i] for i in ids], dtype=float)
    if matrix.ndim != 2:
        raise SelectionError("embedding vectors must share one fixed dimension")
    if not np.isfinite(matrix).all():
        raise SelectionError("embedding vectors must be finite")
    return ids, matrix


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape or va.ndim != 1:
        raise SelectionError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise SelectionError("cosine similarity undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


def _safe_cos(a: np.ndarray, b: np.ndarray) -> float:
    # Internal variant for centroids: a degenerate zero centroid ranks last.
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return -1.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class Clustering:
    k: int
    centroids: np.ndarray  # (k, dim)
    assignment: dict[str, int]
    seed: int
    inertia_trace: tuple[float, ...] = ()


def kmeans(
    vectors: Mapping[str, Sequence[float]],
    k: int,
    seed: int = 0,
    max_iters: int = 100,
) -> Clustering:
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Deterministic for fixed inputs and seed. Empty clusters are repaired by
    reseeding with the point currently farthest from its centroid.
    """
    if max_iters < 1:
        raise SelectionError(f"max_iters must be >= 1, got {max_iters}")
    ids, X = _as_matrix(vectors)
    n = len(ids)
    if k < 1 or k > n:
        raise SelectionError(f"k must be in [1, {n}], got {k}")
    rng = random.Random(seed)

    # k-means++ seeding
    centroids = [X[rng.randrange(n)]]
    while len(centroids) < k:
        d2 = np.min([np.sum((X - c) ** 2, axis=1) for c in centroids], axis=0)
        total = float(d2.sum())
        if total <= 0.0:
            centroids.append(X[rng.randrange(n)])
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centroids.append(X[min(idx, n - 1)])
    C = np.array(centroids, dtype=float)

    assignment = None
    inertia_trace: list[float] = []
    for _ in range(max_iters):
        dists = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
        new_assignment = dists.argmin(axis=1)
        for cluster in range(k):
            if not (new_assignment == cluster).any():
                per_point = dists[np.arange(n), new_assignment]
                farthest = int(per_point.argmax())
                new_assignment[farthest] = cluster
                C[cluster] = X[farthest]
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for cluster in range(k):
            C[cluster] = X[assignment == cluster].mean(axis=0)
        inertia = float(
            np.sum((X - C[assignment]) ** 2)
        )
        inertia_trace.append(inertia)
    return Clustering(
        k=k,
        centroids=C,
        assignment={ids[i]: int(assignment[i]) for i in range(n)},
        seed=seed,
        inertia_trace=tuple(inertia_trace),
    )


def select_exemplars(
    clustering: Clustering,
    query: Sequence[float],
    shots: int,
    candidates: Mapping[str, Sequence[float]],
) -> list[str]:
    """Pick one exemplar per query-nearest cluster, ranked by query similarity.

    Ties (equal similarity) break toward the lexicographically smallest id.
    """
    if shots < 1 or shots > clustering.k:
        raise SelectionError(f"shots must be in [1, {clustering.k}], got {shots}")
    q = np.asarray(query, dtype=float)
    cluster_rank = sorted(
        range(clustering.k),
        key=lambda c: (-_safe_cos(clustering.centroids[c], q), c),
    )[:shots]
    chosen: list[tuple[float, str]] = []
    for cluster in cluster_rank:
        members = sorted(i for i, c in clustering.assignment.items() if c == cluster)
        if not members:
            continue
        best = min(members, key=lambda i: (-cosine_similarity(candidates[i], q), i))
        chosen.append((cosine_similarity(candidates[best], q), best))
    chosen.sort(key=lambda pair: (-pair[0], pair[1]))
    return [identifier for _, identifier in chosen]


def manual_exemplars(curated: Sequence[str], shots: int) -> list[str]:
    """First `shots` ids of a curated list, order preserved."""
    if len(set(curated)) != len(curated):
        raise SelectionError("curated exemplar list contains duplicate ids")
    if shots < 1:
        raise SelectionError("few-shot selection requires shots >= 1")
    if shots > len(curated):
        raise SelectionError(f"shots={shots} exceeds curated list of {len(curated)}")
    return list(curated[:shots])


def stub_embedding(key: str, dim: int = STUB_DIM) -> np.ndarray:
    """Deterministic pseudo-random unit vector derived from the key's hash.

    Stands in for the sentence-embedding sidecar in offline tests.
    """
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Read a JSON-Lines embedding file: {"id": ..., "vector": [...]} per line."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            identifier = record["id"]
            if identifier in vectors:
                raise SelectionError(f"{path}:{lineno}: duplicate id {identifier!r}")
            vector = np.asarray(record["vector"], dtype=float)
            if not np.isfinite(vector).all():
                raise SelectionError(f"{path}:{lineno}: non-finite embedding entries")
            if dim is None:
                dim = vector.shape[0]
            elif vector.shape[0] != dim:
                raise SelectionError(
                    f"{path}:{lineno}: dimension {vector.shape[0]} != {dim}"
                )
            vectors[identifier] = vector
    return vectors
