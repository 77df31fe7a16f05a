"""Channel selection and the progressive training/pruning loop."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .clusters import as_fraction, build_universe, keep_count
from .coverage import CoverageInstance, select_greedy
from .errors import SnapshotIOError, ValidationError
from .model import ModelSnapshot, PruneMask, apply_masks, check_masks, model_flops
from .schedule import (PruneState, make_policy, Schedule, layer_sparsity,
                       quantile_threshold, should_prune)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_FIELDS = ["epoch", "layer", "s_l", "n_live", "kept", "n_merges", "h_l",
              "universe_size", "rate", "skipped", "regrown"]


@dataclass
class PipelineConfig:
    linkage: str = "ward"
    tie: str = "random"
    seed: int = 0
    regrow: str = "saturation"
    regrow_ratio: float = 0.25
    trainer_seed: Optional[int] = None  # defaults to ``seed``


def select_filters(weights: np.ndarray, k: int, method: str, tie: str, rng,
                   name: str = "", cutoff: Optional[float] = None):
    """Cluster one layer's kernels and greedily keep ``k`` of its filters.

    Returns the keep-mask over ``weights``' rows, the cluster universe and the
    greedy selection.
    """
    n = weights.shape[0]
    s_view = Fraction(n - k, n)
    universe = build_universe(weights, s_view, method, name=name, cutoff=cutoff)
    instance = CoverageInstance.from_universe(universe, k, weights)
    result = select_greedy(instance, tie, rng=rng)
    return result.mask(n), universe, result


def _layer_record(name, universe, result, **extra) -> dict:
    rec = {"layer": name}
    rec.update(extra)
    if universe is not None:
        rec.update(n_merges=universe.n_merges, h_l=universe.cutoff,
                   universe_size=universe.size, rate=result.rate,
                   kept=len(result.selected), selected=sorted(result.selected),
                   gains=result.gains, rates=result.rates)
    return rec


def channel_selection(snapshot: ModelSnapshot, sparsities: Dict[str, float],
                      method: str = "ward", tie: str = "random", seed: int = 0,
                      records: Optional[list] = None) -> PruneMask:
    """Pick surviving filters for every prunable layer of a dense snapshot.

    Layers at sparsity 1 are left untouched.  Per-layer details are appended
    to ``records`` when given.
    """
    masks = PruneMask.full(snapshot)
    for idx, layer in enumerate(snapshot.layers):
        if not layer.prunable:
            continue
        if layer.name not in sparsities:
            raise ValidationError(f"no sparsity given for prunable layer {layer.name}")
        s = as_fraction(sparsities[layer.name])
        n = layer.out_channels
        if s == 1:
            if records is not None:
                records.append({"layer": layer.name, "s_l": 1.0, "skipped": True})
            continue
        k = keep_count(s, n)
        rng = np.random.default_rng([seed, idx])
        keep, universe, result = select_filters(layer.weights, k, method, tie, rng, layer.name)
        masks.out[layer.name] = keep
        if records is not None:
            records.append(_layer_record(layer.name, universe, result, s_l=float(s),
                                         skipped=False))
    return masks


def gamma_sparsities(snapshot: ModelSnapshot, s_bar) -> Dict[str, Fraction]:
    """Per-layer sparsity from one global gamma quantile over the prunable layers."""
    pool = np.concatenate([l.gammas for l in snapshot.prunable_layers])
    threshold = quantile_threshold(pool, s_bar)
    return {l.name: layer_sparsity(l.gammas, threshold) for l in snapshot.prunable_layers}


# ---------------------------------------------------------------------------
# trainers

Trainer = Callable[[ModelSnapshot, int, int], ModelSnapshot]


@dataclass
class MockTrainer:
    """Stands in for an epoch of SGD: multiplicative gamma drift plus optional weight noise.

    Fully determined by (seed, epoch); drift=0 and noise=0 leave the snapshot unchanged.
    """

    drift: float = 0.0
    noise: float = 0.0

    def __call__(self, snapshot: ModelSnapshot, epoch: int, seed: int) -> ModelSnapshot:
        if self.drift == 0 and self.noise == 0:
            return snapshot
        rng = np.random.default_rng([seed, epoch])
        layers = []
        for layer in snapshot.layers:
            gammas, weights = layer.gammas, layer.weights
            if gammas is not None and self.drift:
                factor = 1 + self.drift * rng.uniform(-1, 1, gammas.shape)
                gammas = (gammas * factor).astype(np.float32)
            if self.noise:
                weights = weights + np.float32(self.noise) * rng.standard_normal(
                    weights.shape, dtype=np.float32)
            layers.append(replace(layer, weights=weights, gammas=gammas))
        return snapshot.with_layers(layers)


# ---------------------------------------------------------------------------
# progressive loop


@dataclass
class RunReport:
    config: dict
    events: List[dict] = field(default_factory=list)
    flops: dict = field(default_factory=dict)
    final_kept: Dict[str, int] = field(default_factory=dict)
    masks: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def records(self) -> List[dict]:
        return [dict(r, epoch=e["epoch"]) for e in self.events for r in e["layers"]]

    def to_json(self) -> dict:
        return {"schema": SCHEMA_VERSION, "config": self.config, "events": self.events,
                "flops": self.flops, "final_kept": self.final_kept, "masks": self.masks}

    @classmethod
    def from_json(cls, data: dict) -> "RunReport":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported report schema {data.get('schema')!r}")
        return cls(data["config"], data["events"], data["flops"], data["final_kept"],
                   data.get("masks", {}))


def _live_view(snapshot, state, layer, masks_at_event):
    rows = np.flatnonzero(state.masks[layer.name])
    if layer.input is not None and layer.input in masks_at_event:
        cols = np.flatnonzero(masks_at_event[layer.input])
    else:
        cols = np.arange(layer.in_channels)
    return rows, layer.weights[rows][:, cols]


def state_mask(snapshot: ModelSnapshot, state: PruneState) -> PruneMask:
    masks = PruneMask.full(snapshot)
    masks.out.update({k: v.copy() for k, v in state.masks.items()})
    return masks


def pruning_event(snapshot: ModelSnapshot, state: PruneState, s_bar, cfg: PipelineConfig,
                  policy=None, final: bool = False) -> dict:
    """One pruning event on the current masked view of ``snapshot``.

    Channels already pruned stay out of the gamma pool but count towards the
    global sparsity, so repeated events do not compound.
    """
    policy = policy or make_policy(cfg.regrow, cfg.regrow_ratio)
    prunable = snapshot.prunable_layers
    total = sum(l.out_channels for l in prunable)
    pruned = sum(int((~state.masks[l.name]).sum()) for l in prunable)
    live_pool = np.concatenate([l.gammas[state.masks[l.name]] for l in prunable])
    level = as_fraction(s_bar) * total - pruned
    threshold = None
    if level > 0:
        threshold = quantile_threshold(live_pool, level / (total - pruned))

    masks_at_event = {k: v.copy() for k, v in state.masks.items()}
    event = {"epoch": state.epoch, "threshold": threshold, "layers": []}
    for idx, layer in enumerate(snapshot.layers):
        if not layer.prunable:
            continue
        name, n = layer.name, layer.out_channels
        live = masks_at_event[name]
        n_pruned = n - int(live.sum())
        below = layer_sparsity(layer.gammas[live], threshold) * int(live.sum())
        s_l = Fraction(n_pruned + int(below), n)
        state.sparsities[name] = s_l
        rec = {"layer": name, "s_l": float(s_l), "n_live": int(live.sum())}
        if s_l == 1:
            rec.update(skipped=True, kept=int(live.sum()))
            log.info("epoch %d: %s saturated, selection skipped", state.epoch, name)
        else:
            k = keep_count(s_l, n)
            rows, view = _live_view(snapshot, state, layer, masks_at_event)
            rng = np.random.default_rng([cfg.seed, state.epoch, idx])
            keep_view, universe, result = select_filters(view, k, cfg.linkage, cfg.tie, rng, name)
            keep = np.zeros(n, dtype=bool)
            keep[rows[keep_view]] = True
            state.prune(name, keep, layer.gammas)
            rec = _layer_record(name, universe, result, **rec, skipped=False)
            rec["selected"] = [int(rows[i]) for i in rec["selected"]]
        rec["regrown"] = policy(state, name, s_l == 1, final)
        rec["kept"] = int(state.masks[name].sum())
        event["layers"].append(rec)
    check_masks(snapshot, state_mask(snapshot, state))
    return event


def run_pipeline(snapshot: ModelSnapshot, trainer: Trainer, sched: Schedule,
                 cfg: PipelineConfig = None, epochs: int = None, policy=None,
                 on_event=None):
    """Train for ``epochs`` (default ``t_prune``), pruning on schedule.

    ``on_event(snapshot, state, event)`` is called after each pruning event.
    Returns the hard-pruned snapshot and the run report.
    """
    cfg = cfg or PipelineConfig()
    epochs = sched.t_prune if epochs is None else epochs
    baseline = snapshot
    state = PruneState({l.name: np.ones(l.out_channels, dtype=bool)
                        for l in snapshot.prunable_layers})
    report = RunReport({**asdict(cfg), **asdict(sched), "epochs": epochs})
    current = snapshot
    for t in range(1, epochs + 1):
        state.epoch = t
        current = trainer(current, t, cfg.seed if cfg.trainer_seed is None else cfg.trainer_seed)
        if sched.sparsity > 0 and should_prune(t, sched):
            last = t + sched.delta_t > min(sched.t_prune, epochs)
            event = pruning_event(current, state, sched.sparsity, cfg, policy, last)
            report.events.append(event)
            if on_event is not None:
                on_event(current, state, event)
    final_mask = state_mask(current, state)
    pruned = apply_masks(current, final_mask)
    report.flops = model_flops(pruned, reference=baseline)
    report.flops.pop("per_layer")
    report.final_kept = {l.name: int(state.masks[l.name].sum()) for l in current.prunable_layers}
    report.masks = final_mask.to_json()
    return pruned, report


# ---------------------------------------------------------------------------
# report output


def emit_report(report: RunReport, path, fmt: str = "json") -> None:
    path = Path(path)
    try:
        if fmt == "json":
            with open(path, "w") as fh:
                json.dump(report.to_json(), fh, indent=1, sort_keys=True)
                fh.write("\n")
        elif fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, CSV_FIELDS, extrasaction="ignore")
                writer.writeheader()
                for rec in report.records:
                    writer.writerow({k: rec.get(k, "") for k in CSV_FIELDS})
        else:
            raise ValidationError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise SnapshotIOError(f"cannot write report {path}: {exc}") from exc
