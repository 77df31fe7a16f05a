"""Greedy maximum cluster coverage over a layer's filters.

Every kernel (filter i, channel j) belongs to one cluster of channel j.  A
filter covers the clusters of all its kernels; the solver picks ``k`` filters,
each time taking one that covers the most still-uncovered clusters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .clusters import LayerClusterUniverse
from .errors import ValidationError

TIE_BREAKS = ("random", "max-l2", "min-l2")
BRUTE_FORCE_LIMIT = 20


@dataclass
class CoverageInstance:
    labels: np.ndarray  # (n_out, n_in) universe-wide cluster ids
    k: int
    universe_size: int = None
    norms: Optional[np.ndarray] = None  # per-filter l2 norm, for the norm tie-breaks

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValidationError("labels must be (n_out, n_in)")
        if self.universe_size is None:
            self.universe_size = int(self.labels.max()) + 1 if self.labels.size else 0
        n_out = self.labels.shape[0]
        if not 1 <= self.k <= n_out:
            raise ValidationError(f"k must lie in 1..{n_out}, got {self.k}")

    @classmethod
    def from_universe(cls, universe: LayerClusterUniverse, k: int, weights=None):
        norms = None
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            norms = np.sqrt((w.reshape(len(w), -1) ** 2).sum(axis=1))
        return cls(universe.labels, k, universe.size, norms)

    @property
    def n_filters(self) -> int:
        return self.labels.shape[0]


@dataclass
class SelectionResult:
    selected: List[int]
    covered: np.ndarray
    gains: List[int] = field(default_factory=list)
    rates: List[float] = field(default_factory=list)  # coverage rate after each pick

    @property
    def covered_count(self) -> int:
        return int(self.covered.sum())

    @property
    def rate(self) -> float:
        return coverage_rate(self)

    def mask(self, n_filters: int) -> np.ndarray:
        keep = np.zeros(n_filters, dtype=bool)
        keep[self.selected] = True
        return keep


def filter_gain(instance: CoverageInstance, i: int, covered: np.ndarray) -> int:
    """Number of still-uncovered clusters that filter ``i`` would cover."""
    return int((~covered[instance.labels[i]]).sum())


def _break_tie(candidates: np.ndarray, tie: str, rng, norms) -> int:
    if len(candidates) == 1:
        return int(candidates[0])
    if tie == "random":
        return int(candidates[rng.integers(len(candidates))])
    if norms is None:
        raise ValidationError(f"tie-break {tie!r} needs filter norms")
    vals = norms[candidates]
    target = vals.max() if tie == "max-l2" else vals.min()
    return int(candidates[np.flatnonzero(vals == target)[0]])


def select_greedy(instance: CoverageInstance, tie: str = "random", seed=0,
                  rng: np.random.Generator = None) -> SelectionResult:
    if tie not in TIE_BREAKS:
        raise ValidationError(f"unknown tie-break {tie!r}; choose from {TIE_BREAKS}")
    if rng is None:
        rng = np.random.default_rng(seed)
    labels = instance.labels
    covered = np.zeros(instance.universe_size, dtype=bool)
    available = np.ones(instance.n_filters, dtype=bool)
    result = SelectionResult([], covered)
    for _ in range(instance.k):
        # coverage score of each kernel is 1 while its cluster is uncovered
        gains = (~covered[labels]).sum(axis=1)
        gains[~available] = -1
        best = gains.max()
        pick = _break_tie(np.flatnonzero(gains == best), tie, rng, instance.norms)
        covered[labels[pick]] = True
        available[pick] = False
        result.selected.append(pick)
        result.gains.append(int(best))
        result.rates.append(float(covered.sum()) / instance.universe_size)
    return result


def coverage_count(instance: CoverageInstance, filters) -> int:
    return int(np.unique(instance.labels[list(filters)]).size)


def brute_force_optimum(instance: CoverageInstance) -> int:
    """Best coverage over every k-subset of filters."""
    n = instance.n_filters
    if n > BRUTE_FORCE_LIMIT:
        raise ValidationError(f"brute force limited to {BRUTE_FORCE_LIMIT} filters, got {n}")
    return max(coverage_count(instance, combo)
               for combo in itertools.combinations(range(n), instance.k))


def coverage_rate(result: SelectionResult, universe_size: int = None) -> float:
    size = len(result.covered) if universe_size is None else universe_size
    if size == 0:
        raise ValidationError("empty universe")
    return result.covered_count / size


def greedy_bound(optimum: int) -> int:
    """Smallest integer coverage the (1 - 1/e) guarantee allows."""
    return math.ceil((1 - 1 / math.e) * optimum)
