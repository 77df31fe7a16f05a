"""Per-channel kernel clusters for one conv layer.

Each input channel's kernel set is agglomerated for the layer's merge budget.
The layer cut-off height is the largest of the per-channel merge distances at
that budget, and every channel is then cut against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import ConvLayer
from .linkage import MergeSequence, agglomerate, control_cut, linkage_objective


def as_fraction(value) -> Fraction:
    """Exact rational for a sparsity; floats go through their shortest repr.

    ``Fraction(0.1)`` is slightly above 1/10, which would push ``ceil(0.1 * 10)``
    to 2.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def merge_budget(s_l, n_out: int) -> int:
    s = as_fraction(s_l)
    if not 0 <= s <= 1:
        raise ValidationError(f"sparsity must lie in [0, 1], got {s_l}")
    return math.ceil(s * n_out)


def keep_count(s_l, n_out: int) -> int:
    """Number of filters surviving sparsity ``s_l``: ceil((1 - s) * n)."""
    return math.ceil((1 - as_fraction(s_l)) * n_out)


def layer_cutoff(distances: Sequence[float]) -> float:
    if len(distances) == 0:
        raise ValidationError("layer has no channels")
    return float(max(distances))


def clusters_per_channel(seq: MergeSequence, n_merges: int, h_l: float):
    if n_merges > seq.steps:
        raise ValidationError(f"sequence holds {seq.steps} merges, need {n_merges}")
    return control_cut(seq, n_merges, h_l)


@dataclass
class LayerClusterUniverse:
    layer: str
    sparsity: Fraction
    n_merges: int
    cutoff: float
    partitions: List[list]  # per input channel, list of tuples of filter indices
    labels: np.ndarray  # (n_out, n_in): universe-wide cluster id of kernel (i, j)
    sequences: List[MergeSequence]

    @property
    def size(self) -> int:
        return sum(len(p) for p in self.partitions)

    @property
    def n_out(self) -> int:
        return self.labels.shape[0]

    @property
    def n_in(self) -> int:
        return self.labels.shape[1]

    def record(self) -> dict:
        return {"layer": self.layer, "s_l": float(self.sparsity), "n_merges": self.n_merges,
                "h_l": self.cutoff, "universe_size": self.size}


def build_universe(weights, s_l, method: str = "ward", name: str = "",
                   cutoff: Optional[float] = None) -> LayerClusterUniverse:
    """Cluster every input channel of a layer or a (out, in, kh, kw) tensor.

    ``cutoff`` overrides the layer's own height, e.g. to reuse one computed at
    an earlier pruning event.
    """
    if isinstance(weights, ConvLayer):
        name = name or weights.name
        weights = weights.weights
    weights = np.asarray(weights)
    if weights.ndim != 4:
        raise ValidationError("weights must be (out, in, kh, kw)")
    s = as_fraction(s_l)
    if s >= 1:
        raise ValidationError(f"{name}: sparsity 1 leaves nothing to cluster")
    n_out, n_in = weights.shape[:2]
    n_merges = min(merge_budget(s, n_out), n_out - 1)
    flat = weights.reshape(n_out, n_in, -1).astype(np.float64)
    seqs = [agglomerate(flat[:, j], method, n_merges, channel=j) for j in range(n_in)]
    h_l = layer_cutoff([linkage_objective(q, n_merges) for q in seqs])
    if cutoff is not None:
        h_l = float(cutoff)
    partitions = [clusters_per_channel(q, n_merges, h_l) for q in seqs]

    labels = np.empty((n_out, n_in), dtype=np.int64)
    next_id = 0
    for j, part in enumerate(partitions):
        for members in part:
            labels[list(members), j] = next_id
            next_id += 1
    return LayerClusterUniverse(name, s, n_merges, h_l, partitions, labels, seqs)
