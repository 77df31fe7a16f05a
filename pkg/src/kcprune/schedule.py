"""BN-gamma driven sparsity: global quantile threshold, per-layer ratios,
pruning cadence and channel regrowth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from .clusters import as_fraction
from .errors import ValidationError


@dataclass
class Schedule:
    sparsity: float = 0.5
    t_prune: int = 180
    delta_t: int = 2

    def __post_init__(self):
        if self.delta_t < 1:
            raise ValidationError("delta_t must be >= 1")
        if not 0 <= self.sparsity < 1:
            raise ValidationError("global sparsity must lie in [0, 1)")


def quantile_threshold(pool, s_bar) -> Optional[float]:
    """Smallest pool value whose empirical CDF reaches ``s_bar``.

    Returns None for ``s_bar == 0``, meaning nothing is pruned.
    """
    values = np.sort(np.asarray(pool, dtype=np.float64).ravel())
    if values.size == 0:
        raise ValidationError("empty gamma pool")
    s = as_fraction(s_bar)
    if not 0 <= s < 1:
        raise ValidationError(f"global sparsity must lie in [0, 1), got {s_bar}")
    if s == 0:
        return None
    # F(values[r - 1]) >= r / n, and r = ceil(s n) is the first rank reaching s
    rank = math.ceil(s * values.size)
    return float(values[rank - 1])


def layer_sparsity(gammas, threshold: Optional[float]) -> Fraction:
    """Fraction of a layer's channels whose gamma is at or below ``threshold``."""
    g = np.asarray(gammas, dtype=np.float64)
    if g.size == 0:
        raise ValidationError("layer has no gammas")
    if threshold is None:
        return Fraction(0)
    return Fraction(int(np.count_nonzero(g <= threshold)), g.size)


def should_prune(t: int, sched: Schedule) -> bool:
    if t < 1:
        raise ValidationError("epochs count from 1")
    return t % sched.delta_t == 0 and t <= sched.t_prune


@dataclass
class PruneState:
    """Masks over each prunable layer's full channel set, plus pruning history.

    ``pruned_gammas[layer][channel]`` keeps the gamma a channel had when it was
    last removed; regrowth ranks candidates by it.
    """

    masks: Dict[str, np.ndarray]
    sparsities: Dict[str, Fraction] = field(default_factory=dict)
    pruned_gammas: Dict[str, Dict[int, float]] = field(default_factory=dict)
    epoch: int = 0
    regrowth_log: List[Tuple[int, str, List[int]]] = field(default_factory=list)

    def prune(self, layer: str, keep: np.ndarray, gammas) -> List[int]:
        """Shrink ``layer``'s mask to ``keep`` and remember what was dropped."""
        old = self.masks[layer]
        if np.any(keep & ~old):
            raise ValidationError(f"{layer}: pruning cannot revive channels")
        dropped = np.flatnonzero(old & ~keep)
        hist = self.pruned_gammas.setdefault(layer, {})
        for c in dropped:
            hist[int(c)] = float(gammas[c])
        self.masks[layer] = keep.copy()
        return [int(c) for c in dropped]


def regrow(state: PruneState, layer: str, count: int) -> List[int]:
    """Restore the ``count`` pruned channels of ``layer`` with the highest recorded gamma.

    Weights are never touched while a channel is masked, so restored channels
    come back with the values they had.
    """
    hist = state.pruned_gammas.get(layer, {})
    if count < 0 or count > len(hist):
        raise ValidationError(f"{layer}: cannot regrow {count} of {len(hist)} pruned channels")
    chosen = sorted(hist, key=lambda c: (-hist[c], c))[:count]
    for c in chosen:
        state.masks[layer][c] = True
        del hist[c]
    if chosen:
        state.regrowth_log.append((state.epoch, layer, chosen))
    return chosen


def regrow_on_saturation(state: PruneState, layer: str, saturated: bool,
                         final: bool = False) -> List[int]:
    """Default regrowth policy: one channel back whenever a layer hits sparsity 1."""
    if not saturated:
        return []
    return regrow(state, layer, min(1, len(state.pruned_gammas.get(layer, {}))))


@dataclass
class RegrowFraction:
    """Restore ``ratio`` of a layer's pruned channels after every non-final event.

    Restored channels rejoin the gamma pool, so the next event can prune a
    different set.  Saturated layers still get their one channel back.
    """

    ratio: float = 0.25

    def __call__(self, state: PruneState, layer: str, saturated: bool,
                 final: bool = False) -> List[int]:
        if saturated:
            return regrow_on_saturation(state, layer, True)
        if final:
            return []
        pending = len(state.pruned_gammas.get(layer, {}))
        return regrow(state, layer, math.ceil(self.ratio * pending))


def no_regrowth(state, layer, saturated, final=False):
    return []


def make_policy(name: str, ratio: float = 0.25):
    if name == "saturation":
        return regrow_on_saturation
    if name == "fraction":
        return RegrowFraction(ratio)
    if name == "none":
        return no_regrowth
    raise ValidationError(f"unknown regrowth policy {name!r}")


REGROW_POLICIES = ("saturation", "fraction", "none")
