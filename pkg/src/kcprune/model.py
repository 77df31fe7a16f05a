"""Snapshot data model, container I/O, hard-pruning masks and FLOPs accounting.

A snapshot is a JSON manifest plus one little-endian float32 blob.  Each
layer entry in the manifest records its shape, its output spatial size, the
byte offsets of its weights and BN scaling factors inside the blob, the
residual block it belongs to and the name of the layer producing its input.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BlobSizeError,
    ConstraintError,
    ManifestError,
    NonFiniteError,
    SnapshotIOError,
    ValidationError,
)

FLOAT = np.dtype("<f4")
BLOCK_KINDS = ("plain", "basic", "bottleneck", "downsample")
_BLOCK_SIZES = {"basic": 2, "bottleneck": 3}


@dataclass
class ConvLayer:
    name: str
    weights: np.ndarray  # (out, in, kh, kw), float32
    out_hw: Tuple[int, int]
    gammas: Optional[np.ndarray] = None
    input: Optional[str] = None  # producer layer name, None for the network input
    block_kind: str = "plain"
    block_id: Optional[str] = None
    block_pos: int = 0
    prunable: bool = False  # filled in by ModelSnapshot from the graph

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_hw(self) -> Tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    def kernel_set(self, j: int) -> np.ndarray:
        """Kernels of input channel ``j`` as an (out, kh*kw) float64 matrix."""
        return self.weights[:, j].reshape(self.out_channels, -1).astype(np.float64)


@dataclass
class Classifier:
    in_features: int
    out_features: int
    input: Optional[str] = None


@dataclass
class Block:
    kind: str
    members: List[str]
    id: Optional[str] = None


@dataclass
class ArchGraph:
    blocks: List[Block]
    input_hw: Tuple[int, int]
    classifier: Optional[Classifier] = None
    producers: Dict[str, Optional[str]] = field(default_factory=dict)

    def consumers(self, name: str) -> List[str]:
        return [c for c, p in self.producers.items() if p == name]


def _as_hw(value) -> Tuple[int, int]:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ManifestError(f"spatial size must be int or [h, w], got {value!r}")
        h, w = int(value[0]), int(value[1])
    else:
        h = w = int(value)
    if h <= 0 or w <= 0:
        raise ValidationError(f"spatial size must be positive, got {value!r}")
    return h, w


class ModelSnapshot:
    """All conv layers of a model plus the architecture graph.

    Snapshots are treated as immutable: every transforming operation returns
    a new instance.
    """

    def __init__(self, name: str, layers: Sequence[ConvLayer], input_hw,
                 classifier: Optional[Classifier] = None):
        self.name = name
        self.layers: List[ConvLayer] = list(layers)
        self.input_hw = _as_hw(input_hw)
        self.classifier = classifier
        self._index = {layer.name: i for i, layer in enumerate(self.layers)}
        if len(self._index) != len(self.layers):
            raise ManifestError("duplicate layer names")
        self.arch = self._build_graph()
        self._validate()
        self._mark_prunable()

    def __getitem__(self, name: str) -> ConvLayer:
        try:
            return self.layers[self._index[name]]
        except KeyError:
            raise ValidationError(f"unknown layer {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self):
        return len(self.layers)

    @property
    def prunable_layers(self) -> List[ConvLayer]:
        return [layer for layer in self.layers if layer.prunable]

    def _build_graph(self) -> ArchGraph:
        blocks: Dict[Tuple[str, str], Block] = {}
        ordered: List[Block] = []
        for layer in self.layers:
            if layer.block_kind not in BLOCK_KINDS:
                raise ManifestError(f"{layer.name}: unknown block kind {layer.block_kind!r}")
            if layer.block_kind == "plain" or layer.block_id is None:
                ordered.append(Block(layer.block_kind, [layer.name], layer.block_id))
                continue
            key = (layer.block_kind, layer.block_id)
            if key not in blocks:
                blocks[key] = Block(layer.block_kind, [], layer.block_id)
                ordered.append(blocks[key])
            blocks[key].members.append(layer.name)
        for block in ordered:
            want = _BLOCK_SIZES.get(block.kind)
            if want is not None and len(block.members) != want:
                raise ManifestError(
                    f"{block.kind} block {block.id!r} has {len(block.members)} convs, expected {want}")
        producers = {layer.name: layer.input for layer in self.layers}
        return ArchGraph(ordered, self.input_hw, self.classifier, producers)

    def _validate(self):
        for layer in self.layers:
            w = layer.weights
            if w.ndim != 4 or min(w.shape) <= 0:
                raise ManifestError(f"{layer.name}: weights must be a non-empty 4-D tensor")
            if w.dtype != np.float32:
                raise ManifestError(f"{layer.name}: weights must be float32")
            if not np.isfinite(w).all():
                raise NonFiniteError(f"{layer.name}: non-finite weights")
            if layer.gammas is not None:
                if layer.gammas.shape != (layer.out_channels,):
                    raise ManifestError(
                        f"{layer.name}: expected {layer.out_channels} gammas, got {layer.gammas.shape}")
                if not np.isfinite(layer.gammas).all():
                    raise NonFiniteError(f"{layer.name}: non-finite gammas")
            _as_hw(layer.out_hw)
            if layer.input is not None:
                if layer.input not in self._index:
                    raise ManifestError(f"{layer.name}: unknown producer {layer.input!r}")
                if self[layer.input].out_channels != layer.in_channels:
                    raise ManifestError(
                        f"{layer.name}: in_channels {layer.in_channels} != producer "
                        f"{layer.input} out_channels {self[layer.input].out_channels}")
        clf = self.classifier
        if clf is not None and clf.input is not None:
            if clf.input not in self._index:
                raise ManifestError(f"classifier: unknown producer {clf.input!r}")
            if self[clf.input].out_channels != clf.in_features:
                raise ManifestError("classifier in_features does not match its producer")

    def _mark_prunable(self):
        # Outputs of these layers feed an identity shortcut, so their width is pinned.
        residual_inputs = set()
        for block in self.arch.blocks:
            if block.kind in _BLOCK_SIZES:
                residual_inputs.add(self[block.members[0]].input)
        for layer in self.layers:
            if layer.gammas is None:
                layer.prunable = False
            elif layer.block_kind == "basic":
                layer.prunable = layer.block_pos == 0
            elif layer.block_kind == "bottleneck":
                layer.prunable = layer.block_pos in (0, 1)
            elif layer.block_kind == "downsample":
                layer.prunable = False
            else:
                layer.prunable = layer.name not in residual_inputs

    def with_layers(self, layers: Sequence[ConvLayer], classifier=None) -> "ModelSnapshot":
        return ModelSnapshot(self.name, layers, self.input_hw,
                             classifier if classifier is not None else self.classifier)

    def copy(self) -> "ModelSnapshot":
        layers = [replace(l, weights=l.weights.copy(),
                          gammas=None if l.gammas is None else l.gammas.copy())
                  for l in self.layers]
        clf = replace(self.classifier) if self.classifier else None
        return ModelSnapshot(self.name, layers, self.input_hw, clf)


# ---------------------------------------------------------------------------
# container format


def _blob_path(manifest_path: Path, manifest: dict) -> Path:
    return manifest_path.parent / manifest.get("blob", manifest_path.with_suffix(".bin").name)


def save_snapshot(snapshot: ModelSnapshot, path) -> None:
    path = Path(path)
    blob_name = path.with_suffix(".bin").name
    entries = []
    chunks = []
    offset = 0

    def push(arr: np.ndarray) -> int:
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype=FLOAT).tobytes()
        start = offset
        chunks.append(data)
        offset += len(data)
        return start

    for layer in snapshot.layers:
        entry = {
            "name": layer.name,
            "out": layer.out_channels,
            "in": layer.in_channels,
            "kh": layer.kernel_hw[0],
            "kw": layer.kernel_hw[1],
            "out_hw": list(layer.out_hw),
            "input": layer.input,
            "block": {"kind": layer.block_kind, "id": layer.block_id, "pos": layer.block_pos},
            "weights_offset": push(layer.weights),
            "gamma_offset": None if layer.gammas is None else push(layer.gammas),
        }
        entries.append(entry)
    manifest = {
        "model": snapshot.name,
        "input_hw": list(snapshot.input_hw),
        "blob": blob_name,
        "blob_bytes": offset,
        "layers": entries,
        "classifier": None if snapshot.classifier is None else {
            "in_features": snapshot.classifier.in_features,
            "out_features": snapshot.classifier.out_features,
            "input": snapshot.classifier.input,
        },
    }
    try:
        with open(path.parent / blob_name, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=1)
    except OSError as exc:
        raise SnapshotIOError(f"cannot write snapshot to {path}: {exc}") from exc


def _read_tensor(blob: bytes, offset, count: int, what: str) -> np.ndarray:
    if not isinstance(offset, int) or offset < 0 or offset % 4:
        raise ManifestError(f"{what}: bad offset {offset!r}")
    end = offset + 4 * count
    if end > len(blob):
        raise BlobSizeError(f"{what}: needs bytes [{offset}, {end}) but blob has {len(blob)}")
    return np.frombuffer(blob, dtype=FLOAT, count=count, offset=offset).astype(np.float32)


def load_snapshot(path) -> ModelSnapshot:
    path = Path(path)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise SnapshotIOError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "layers" not in manifest or "input_hw" not in manifest:
        raise ManifestError(f"{path}: manifest needs 'layers' and 'input_hw'")
    try:
        blob = _blob_path(path, manifest).read_bytes()
    except OSError as exc:
        raise SnapshotIOError(f"cannot read blob for {path}: {exc}") from exc
    declared = manifest.get("blob_bytes")
    if declared is not None and declared != len(blob):
        raise BlobSizeError(f"blob has {len(blob)} bytes, manifest declares {declared}")

    layers = []
    for entry in manifest["layers"]:
        try:
            name = entry["name"]
            shape = tuple(int(entry[k]) for k in ("out", "in", "kh", "kw"))
            block = entry.get("block") or {}
            kind = block.get("kind", "plain")
            if min(shape) <= 0:
                raise ManifestError(f"{name}: non-positive dimension in {shape}")
            weights = _read_tensor(blob, entry["weights_offset"], int(np.prod(shape)), name)
            gammas = None
            if entry.get("gamma_offset") is not None:
                gammas = _read_tensor(blob, entry["gamma_offset"], shape[0], name + " gammas")
            layers.append(ConvLayer(
                name=name,
                weights=weights.reshape(shape),
                out_hw=_as_hw(entry["out_hw"]),
                gammas=gammas,
                input=entry.get("input"),
                block_kind=kind,
                block_id=block.get("id"),
                block_pos=int(block.get("pos", 0)),
            ))
        except KeyError as exc:
            raise ManifestError(f"layer entry missing key {exc}") from None
    clf = manifest.get("classifier")
    classifier = None
    if clf:
        try:
            classifier = Classifier(int(clf["in_features"]), int(clf["out_features"]),
                                    clf.get("input"))
        except KeyError as exc:
            raise ManifestError(f"classifier missing key {exc}") from None
    return ModelSnapshot(manifest.get("model", path.stem), layers, manifest["input_hw"], classifier)


# ---------------------------------------------------------------------------
# masks


@dataclass
class PruneMask:
    """Boolean keep-vectors over each layer's output channels.

    Layers absent from ``out`` keep every channel.  Input-channel masks are
    never stored: they are read off the producing layer's output mask.
    """

    out: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def full(cls, snapshot: ModelSnapshot) -> "PruneMask":
        return cls({l.name: np.ones(l.out_channels, dtype=bool) for l in snapshot.layers})

    def out_mask(self, layer: ConvLayer) -> np.ndarray:
        mask = self.out.get(layer.name)
        if mask is None:
            return np.ones(layer.out_channels, dtype=bool)
        return mask

    def in_mask(self, snapshot: ModelSnapshot, layer: ConvLayer) -> np.ndarray:
        if layer.input is None:
            return np.ones(layer.in_channels, dtype=bool)
        return self.out_mask(snapshot[layer.input])

    def kept(self, name: str) -> int:
        return int(np.count_nonzero(self.out[name]))

    def copy(self) -> "PruneMask":
        return PruneMask({k: v.copy() for k, v in self.out.items()})

    def to_json(self) -> dict:
        return {k: [int(b) for b in v] for k, v in self.out.items()}

    @classmethod
    def from_json(cls, data: dict) -> "PruneMask":
        return cls({k: np.asarray(v, dtype=bool) for k, v in data.items()})


def check_masks(snapshot: ModelSnapshot, masks: PruneMask) -> None:
    for name, mask in masks.out.items():
        layer = snapshot[name]
        if mask.shape != (layer.out_channels,):
            raise ValidationError(
                f"{name}: mask length {mask.shape} != out_channels {layer.out_channels}")
        if not layer.prunable and not mask.all():
            raise ConstraintError(f"{name} is not prunable but its mask drops channels")
        if not mask.any():
            raise ConstraintError(f"{name}: mask removes every channel")


def apply_masks(snapshot: ModelSnapshot, masks: PruneMask) -> ModelSnapshot:
    """Hard-prune ``snapshot``: drop masked filters and the matching in-channels."""
    check_masks(snapshot, masks)
    layers = []
    for layer in snapshot.layers:
        keep_out = masks.out_mask(layer)
        keep_in = masks.in_mask(snapshot, layer)
        w = layer.weights[keep_out][:, keep_in]
        layers.append(replace(
            layer,
            weights=np.ascontiguousarray(w),
            gammas=None if layer.gammas is None else layer.gammas[keep_out].copy(),
        ))
    clf = snapshot.classifier
    if clf is not None and clf.input is not None:
        clf = replace(clf, in_features=int(masks.out_mask(snapshot[clf.input]).sum()))
    return snapshot.with_layers(layers, clf)


# ---------------------------------------------------------------------------
# FLOPs (one multiply-add counts as one operation)


def conv_flops(layer: ConvLayer, out_hw=None) -> int:
    h, w = _as_hw(layer.out_hw if out_hw is None else out_hw)
    kh, kw = layer.kernel_hw
    return layer.out_channels * layer.in_channels * kh * kw * h * w


def model_flops(snapshot: ModelSnapshot, reference: Optional[ModelSnapshot] = None) -> dict:
    per_layer = [{"name": l.name, "flops": conv_flops(l)} for l in snapshot.layers]
    total = sum(r["flops"] for r in per_layer)
    if snapshot.classifier is not None:
        clf = snapshot.classifier.in_features * snapshot.classifier.out_features
        per_layer.append({"name": "classifier", "flops": clf})
        total += clf
    result = {"total": total, "per_layer": per_layer}
    if reference is not None:
        base = model_flops(reference)["total"]
        result["baseline"] = base
        result["reduction"] = 1.0 - total / base
    return result
