"""Shipped architecture descriptors.

Each builder returns a :class:`ModelSnapshot` with seeded random weights and
BN scaling factors.  Output spatial sizes are written out per layer so that
FLOPs never depend on re-deriving stride and padding chains.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional

import numpy as np

from .model import Classifier, ConvLayer, ModelSnapshot


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.layers: List[ConvLayer] = []

    def conv(self, name, cin, cout, k, out_hw, input, kind="plain", block=None, pos=0,
             bn=True) -> str:
        fan_in = cin * k * k
        w = self.rng.standard_normal((cout, cin, k, k), dtype=np.float32)
        w *= np.float32(np.sqrt(2.0 / fan_in))
        gammas = self.rng.uniform(0.05, 1.0, cout).astype(np.float32) if bn else None
        self.layers.append(ConvLayer(name, w, (out_hw, out_hw), gammas, input, kind, block, pos))
        return name


def _imagenet_resnet(name: str, block: str, depths, seed: int) -> ModelSnapshot:
    b = _Builder(seed)
    prev = b.conv("conv1", 3, 64, 7, 112, None)
    hw = 56  # after the stride-2 max pool
    cin = 64
    expansion = 4 if block == "bottleneck" else 1
    for stage, (width, depth) in enumerate(zip((64, 128, 256, 512), depths), start=1):
        for i in range(depth):
            stride = 2 if stage > 1 and i == 0 else 1
            out_hw = hw // stride
            bid = f"layer{stage}.{i}"
            cout = width * expansion
            if block == "basic":
                c1 = b.conv(f"{bid}.conv1", cin, width, 3, out_hw, prev, "basic", bid, 0)
                last = b.conv(f"{bid}.conv2", width, width, 3, out_hw, c1, "basic", bid, 1)
            else:
                c1 = b.conv(f"{bid}.conv1", cin, width, 1, hw, prev, "bottleneck", bid, 0)
                c2 = b.conv(f"{bid}.conv2", width, width, 3, out_hw, c1, "bottleneck", bid, 1)
                last = b.conv(f"{bid}.conv3", width, cout, 1, out_hw, c2, "bottleneck", bid, 2)
            if stride != 1 or cin != cout:
                b.conv(f"{bid}.downsample", cin, cout, 1, out_hw, prev, "downsample", bid, 0)
            prev, cin, hw = last, cout, out_hw
    return ModelSnapshot(name, b.layers, 224, Classifier(cin, 1000, prev))


def resnet18(seed: int = 0) -> ModelSnapshot:
    return _imagenet_resnet("resnet18", "basic", (2, 2, 2, 2), seed)


def resnet34(seed: int = 0) -> ModelSnapshot:
    return _imagenet_resnet("resnet34", "basic", (3, 4, 6, 3), seed)


def resnet50(seed: int = 0) -> ModelSnapshot:
    return _imagenet_resnet("resnet50", "bottleneck", (3, 4, 6, 3), seed)


def resnet56(seed: int = 0) -> ModelSnapshot:
    """CIFAR ResNet-56 with parameter-free (zero-padding) shortcuts."""
    b = _Builder(seed)
    prev = b.conv("conv1", 3, 16, 3, 32, None)
    cin, hw = 16, 32
    for stage, width in enumerate((16, 32, 64), start=1):
        for i in range(9):
            stride = 2 if stage > 1 and i == 0 else 1
            out_hw = hw // stride
            bid = f"layer{stage}.{i}"
            c1 = b.conv(f"{bid}.conv1", cin, width, 3, out_hw, prev, "basic", bid, 0)
            prev = b.conv(f"{bid}.conv2", width, width, 3, out_hw, c1, "basic", bid, 1)
            cin, hw = width, out_hw
    return ModelSnapshot("resnet56", b.layers, 32, Classifier(cin, 10, prev))


def toy_plain(widths=(4, 4, 4), in_channels: int = 3, k: int = 3, hw: int = 8,
              seed: int = 0, classes: int = 10) -> ModelSnapshot:
    """A straight chain of convs, every one of them prunable."""
    b = _Builder(seed)
    prev: Optional[str] = None
    cin = in_channels
    for i, width in enumerate(widths):
        prev = b.conv(f"conv{i + 1}", cin, width, k, hw, prev)
        cin = width
    return ModelSnapshot("toy_plain", b.layers, hw, Classifier(cin, classes, prev))


def toy_residual(seed: int = 0) -> ModelSnapshot:
    """Stem, two basic blocks and one bottleneck block with a projection shortcut."""
    b = _Builder(seed)
    prev = b.conv("stem", 3, 8, 3, 8, None)
    c1 = b.conv("b1.conv1", 8, 6, 3, 8, prev, "basic", "b1", 0)
    prev = b.conv("b1.conv2", 6, 8, 3, 8, c1, "basic", "b1", 1)
    c1 = b.conv("b2.conv1", 8, 6, 3, 4, prev, "basic", "b2", 0)
    b2 = b.conv("b2.conv2", 6, 8, 3, 4, c1, "basic", "b2", 1)
    c1 = b.conv("b3.conv1", 8, 6, 1, 4, b2, "bottleneck", "b3", 0)
    c2 = b.conv("b3.conv2", 6, 6, 3, 4, c1, "bottleneck", "b3", 1)
    prev = b.conv("b3.conv3", 6, 12, 1, 4, c2, "bottleneck", "b3", 2)
    b.conv("b3.downsample", 8, 12, 1, 4, b2, "downsample", "b3", 0)
    return ModelSnapshot("toy_residual", b.layers, 8, Classifier(12, 10, prev))


DESCRIPTORS: Dict[str, Callable[..., ModelSnapshot]] = {
    "resnet18": resnet18,
    "resnet34": resnet34,
    "resnet50": resnet50,
    "resnet56": resnet56,
    "toy_plain": toy_plain,
    "toy_residual": toy_residual,
}


def build(name: str, seed: int = 0) -> ModelSnapshot:
    try:
        return DESCRIPTORS[name](seed=seed)
    except KeyError:
        raise KeyError(f"unknown descriptor {name!r}; choose from {sorted(DESCRIPTORS)}") from None
