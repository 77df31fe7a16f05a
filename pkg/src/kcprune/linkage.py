"""Agglomerative clustering of one input channel's kernels.

Clusters are identified by the smallest kernel index they contain, so a merge
of clusters ``a < b`` produces cluster ``a``.  The closest pair is found over
the Lance-Williams distance matrix with cached per-row minima; ties go to the
lexicographically smallest ``(a, b)`` pair.

Ward distances are the raw SSE increase ``|A||B|/(|A|+|B|) * ||m_A - m_B||^2``
(squared Euclidean).  Single, complete and average linkage use the plain
Euclidean distance between kernels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, List, Tuple

import numpy as np

from .errors import ValidationError

METHODS = ("ward", "single", "complete", "average")


def sse(points: np.ndarray) -> float:
    """Sum of squared distances of ``points`` (rows) to their centroid."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    return float(((points - points.mean(axis=0)) ** 2).sum())


def ward_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("ward_distance needs two non-empty clusters")
    na, nb = len(a), len(b)
    diff = a.mean(axis=0) - b.mean(axis=0)
    return na * nb / (na + nb) * float(diff @ diff)


@dataclass(frozen=True)
class Merge:
    step: int
    a: int
    b: int
    distance: float


class MergeSequence:
    """The merges performed on one kernel set, in order.

    ``partition(c)`` replays the first ``c`` merges, so every intermediate
    cluster set is available without being stored.
    """

    def __init__(self, n: int, merges: List[Merge], method: str = "ward", channel: int = 0):
        self.n = n
        self.merges = list(merges)
        self.method = method
        self.channel = channel

    @property
    def steps(self) -> int:
        return len(self.merges)

    @property
    def distances(self) -> np.ndarray:
        return np.array([m.distance for m in self.merges], dtype=np.float64)

    def labels(self, c: int) -> np.ndarray:
        """Cluster id (smallest member index) of every kernel after ``c`` merges."""
        if not 0 <= c <= self.steps:
            raise ValidationError(f"step {c} outside 0..{self.steps}")
        parent = np.arange(self.n)
        for m in self.merges[:c]:
            parent[parent == m.b] = m.a
        return parent

    def partition(self, c: int) -> List[Tuple[int, ...]]:
        labels = self.labels(c)
        groups = {}
        for i, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(i)
        return [tuple(groups[k]) for k in sorted(groups)]

    def dump_jsonl(self, fh: IO[str]) -> None:
        for m in self.merges:
            fh.write(json.dumps({"channel": self.channel, "step": m.step, "a": m.a,
                                 "b": m.b, "distance": m.distance}) + "\n")


def _initial_distances(x: np.ndarray, method: str) -> np.ndarray:
    # explicit differences rather than the Gram expansion: no cancellation error
    diff = x[:, None, :] - x[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    if method == "ward":
        return 0.5 * d
    return np.sqrt(d)


def _lance_williams(method, d_ki, d_kj, d_ij, n_i, n_j, n_k):
    if method == "single":
        return np.minimum(d_ki, d_kj)
    if method == "complete":
        return np.maximum(d_ki, d_kj)
    if method == "average":
        return (n_i * d_ki + n_j * d_kj) / (n_i + n_j)
    total = n_i + n_j + n_k
    return ((n_i + n_k) * d_ki + (n_j + n_k) * d_kj - n_k * d_ij) / total


def _check(kernels, method: str) -> np.ndarray:
    if method not in METHODS:
        raise ValidationError(f"unknown linkage {method!r}; choose from {METHODS}")
    x = np.asarray(kernels, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("kernel set must be a non-empty (n, d) array")
    return x


def agglomerate(kernels, method: str = "ward", steps: int = None, channel: int = 0) -> MergeSequence:
    """Run ``steps`` merges (default: all the way to the root)."""
    x = _check(kernels, method)
    n = len(x)
    if steps is None:
        steps = n - 1
    if not 0 <= steps <= n - 1:
        raise ValidationError(f"steps must lie in 0..{n - 1}, got {steps}")
    merges: List[Merge] = []
    if steps == 0:
        return MergeSequence(n, merges, method, channel)

    d = _initial_distances(x, method)
    # only the strict upper triangle is searched
    d[np.tril_indices(n)] = np.inf
    upper = d  # d[i, j] for i < j
    size = np.ones(n, dtype=np.float64)
    active = np.ones(n, dtype=bool)
    rowmin = np.full(n, np.inf)
    rownn = np.full(n, -1)
    for i in range(n - 1):
        j = int(np.argmin(upper[i, i + 1:])) + i + 1
        rowmin[i], rownn[i] = upper[i, j], j

    def refresh(i):
        row = upper[i, i + 1:]
        if row.size == 0:
            rowmin[i], rownn[i] = np.inf, -1
            return
        j = int(np.argmin(row))
        rowmin[i], rownn[i] = row[j], j + i + 1

    for step in range(1, steps + 1):
        a = int(np.argmin(rowmin))
        b = int(rownn[a])
        dist = float(rowmin[a])
        merges.append(Merge(step, a, b, dist))

        others = np.flatnonzero(active)
        others = others[(others != a) & (others != b)]
        d_ka = np.where(others < a, upper[others, a], upper[a, others])
        d_kb = np.where(others < b, upper[others, b], upper[b, others])
        new = _lance_williams(method, d_ka, d_kb, dist, size[a], size[b], size[others])

        lower = others[others < a]
        higher = others[others > a]
        upper[lower, a] = new[others < a]
        upper[a, higher] = new[others > a]
        upper[b, :] = np.inf
        upper[:, b] = np.inf
        active[b] = False
        size[a] += size[b]
        rowmin[b], rownn[b] = np.inf, -1

        refresh(a)
        stale = others[(rownn[others] == a) | (rownn[others] == b)]
        for k in stale:
            refresh(int(k))
        # rows whose cached minimum may now be beaten by the new column a
        fresh = lower[(rownn[lower] != a) & (rownn[lower] != b)]
        vals = upper[fresh, a]
        better = (vals < rowmin[fresh]) | ((vals == rowmin[fresh]) & (a < rownn[fresh]))
        for k in fresh[better]:
            rowmin[k], rownn[k] = upper[k, a], a
    return MergeSequence(n, merges, method, channel)


def _cluster_distance(x, dist, members_a, members_b, method):
    if method == "ward":
        return ward_distance(x[members_a], x[members_b])
    block = dist[np.ix_(members_a, members_b)]
    if method == "single":
        return float(block.min())
    if method == "complete":
        return float(block.max())
    return float(block.mean())


def agglomerate_naive(kernels, method: str = "ward", steps: int = None) -> MergeSequence:
    """Reference clustering that recomputes every cluster distance from its members.

    O(n^3) distance evaluations; used to cross-check :func:`agglomerate`.
    """
    x = _check(kernels, method)
    n = len(x)
    if steps is None:
        steps = n - 1
    if not 0 <= steps <= n - 1:
        raise ValidationError(f"steps must lie in 0..{n - 1}, got {steps}")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    clusters = {i: [i] for i in range(n)}
    merges = []
    for step in range(1, steps + 1):
        best = None
        ids = sorted(clusters)
        for p, a in enumerate(ids):
            for b in ids[p + 1:]:
                value = _cluster_distance(x, dist, clusters[a], clusters[b], method)
                if best is None or value < best[0]:
                    best = (value, a, b)
        value, a, b = best
        merges.append(Merge(step, a, b, value))
        clusters[a] = clusters[a] + clusters.pop(b)
    return MergeSequence(n, merges, method)


def linkage_objective(seq: MergeSequence, c: int) -> float:
    """Merge distance at step ``c``; zero before any merge."""
    if not 0 <= c <= seq.steps:
        raise ValidationError(f"step {c} outside 0..{seq.steps}")
    return 0.0 if c == 0 else seq.merges[c - 1].distance


def control_cut(seq: MergeSequence, c: int, h: float) -> List[Tuple[int, ...]]:
    """Partition after ``c`` merges if that merge stays within height ``h``, else after ``c - 1``."""
    if c == 0 or h >= linkage_objective(seq, c):
        return seq.partition(c)
    return seq.partition(c - 1)


def check_monotone(seq: MergeSequence) -> bool:
    d = seq.distances
    return bool(np.all(d[1:] >= d[:-1]))
