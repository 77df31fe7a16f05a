import json

import numpy as np
import pytest

from kcprune import descriptors
from kcprune.errors import (BlobSizeError, ConstraintError, ManifestError, NonFiniteError,
                            SnapshotIOError, ValidationError)
from kcprune.model import (ConvLayer, PruneMask, apply_masks, conv_flops, load_snapshot,
                           model_flops, save_snapshot)


def _bits(snapshot):
    return [(l.name, l.weights.tobytes(), None if l.gammas is None else l.gammas.tobytes())
            for l in snapshot.layers]


def test_round_trip_is_bit_identical(tmp_path, toy_residual):
    path = tmp_path / "toy.json"
    save_snapshot(toy_residual, path)
    back = load_snapshot(path)
    assert _bits(back) == _bits(toy_residual)
    assert [l.prunable for l in back.layers] == [l.prunable for l in toy_residual.layers]
    assert back.classifier == toy_residual.classifier


def test_three_layer_manifest(tmp_path, toy_plain):
    save_snapshot(toy_plain, tmp_path / "m.json")
    snap = load_snapshot(tmp_path / "m.json")
    assert len(snap) == 3
    assert all(l.prunable for l in snap.layers)


def test_short_blob_is_size_mismatch(tmp_path):
    snap = descriptors.toy_plain(widths=(64,), in_channels=3, k=7)
    save_snapshot(snap, tmp_path / "m.json")
    blob = tmp_path / "m.bin"
    blob.write_bytes(blob.read_bytes()[:4 * 64 * 3 * 7 * 7 - 8])
    manifest = json.loads((tmp_path / "m.json").read_text())
    manifest.pop("blob_bytes")
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    with pytest.raises(BlobSizeError):
        load_snapshot(tmp_path / "m.json")


def test_declared_blob_size_checked(tmp_path, toy_plain):
    save_snapshot(toy_plain, tmp_path / "m.json")
    with open(tmp_path / "m.bin", "ab") as fh:
        fh.write(b"\0" * 4)
    with pytest.raises(BlobSizeError):
        load_snapshot(tmp_path / "m.json")


def test_nan_is_non_finite_error(tmp_path, toy_plain):
    save_snapshot(toy_plain, tmp_path / "m.json")
    raw = bytearray((tmp_path / "m.bin").read_bytes())
    raw[8:12] = np.array([np.nan], dtype="<f4").tobytes()
    (tmp_path / "m.bin").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        load_snapshot(tmp_path / "m.json")


def test_error_codes_are_distinct(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_snapshot(tmp_path / "bad.json")
    (tmp_path / "partial.json").write_text(json.dumps({"layers": []}))
    with pytest.raises(ManifestError):
        load_snapshot(tmp_path / "partial.json")
    assert len({ManifestError, BlobSizeError, NonFiniteError}) == 3


def test_unwritable_path(toy_plain, tmp_path):
    with pytest.raises(SnapshotIOError):
        save_snapshot(toy_plain, tmp_path / "missing" / "dir" / "m.json")


def test_masked_round_trip_shapes(tmp_path, toy_plain):
    s = {"conv1": 0.5, "conv2": 0.25, "conv3": 0.75}
    masks = PruneMask.full(toy_plain)
    for name, frac in s.items():
        keep = np.ones(4, dtype=bool)
        keep[:int(frac * 4)] = False
        masks.out[name] = keep
    pruned = apply_masks(toy_plain, masks)
    save_snapshot(pruned, tmp_path / "p.json")
    back = load_snapshot(tmp_path / "p.json")
    # ceil((1 - s) * 4) for s = 0.5, 0.25, 0.75
    assert [l.out_channels for l in back.layers] == [2, 3, 1]
    assert [l.in_channels for l in back.layers] == [3, 2, 3]
    assert back.classifier.in_features == 1


def test_prunability_rules(toy_residual):
    flags = {l.name: l.prunable for l in toy_residual.layers}
    assert flags == {
        "stem": False, "b1.conv1": True, "b1.conv2": False,
        "b2.conv1": True, "b2.conv2": False,
        "b3.conv1": True, "b3.conv2": True, "b3.conv3": False, "b3.downsample": False,
    }


def test_resnet_prunable_layers():
    r18 = descriptors.resnet18()
    assert [l.name for l in r18.prunable_layers] == [
        f"layer{s}.{i}.conv1" for s in range(1, 5) for i in range(2)]
    r56 = descriptors.resnet56()
    assert len(r56.prunable_layers) == 27


def test_bad_block_size_rejected():
    w = np.zeros((2, 2, 1, 1), dtype=np.float32)
    layers = [ConvLayer("a", w, (1, 1), np.ones(2, np.float32), None, "basic", "blk", 0)]
    from kcprune.model import ModelSnapshot
    with pytest.raises(ManifestError):
        ModelSnapshot("x", layers, 4)


def test_basic_block_half_mask(toy_residual):
    masks = PruneMask.full(toy_residual)
    keep = np.array([1, 0, 1, 0, 1, 0], dtype=bool)
    masks.out["b1.conv1"] = keep
    pruned = apply_masks(toy_residual, masks)
    assert pruned["b1.conv1"].out_channels == 3
    assert pruned["b1.conv2"].in_channels == 3
    assert pruned["b1.conv2"].out_channels == toy_residual["b1.conv2"].out_channels
    np.testing.assert_array_equal(pruned["b1.conv2"].weights,
                                  toy_residual["b1.conv2"].weights[:, keep])
    np.testing.assert_array_equal(pruned["b1.conv1"].gammas, toy_residual["b1.conv1"].gammas[keep])


def test_all_true_masks_are_identity(toy_residual):
    pruned = apply_masks(toy_residual, PruneMask.full(toy_residual))
    assert _bits(pruned) == _bits(toy_residual)


def test_bottleneck_masks(toy_residual):
    masks = PruneMask.full(toy_residual)
    masks.out["b3.conv1"] = np.array([1, 1, 0, 0, 1, 0], dtype=bool)
    masks.out["b3.conv2"] = np.array([0, 1, 1, 0, 1, 1], dtype=bool)
    pruned = apply_masks(toy_residual, masks)
    assert pruned["b3.conv3"].out_channels == 12
    assert pruned["b3.conv3"].in_channels == 4
    assert pruned["b3.conv2"].in_channels == 3
    assert pruned["b3.downsample"].in_channels == 8


def test_mask_on_non_prunable_layer_rejected(toy_residual):
    masks = PruneMask.full(toy_residual)
    masks.out["b1.conv2"] = np.array([0] + [1] * 7, dtype=bool)
    with pytest.raises(ConstraintError):
        apply_masks(toy_residual, masks)


def test_mask_length_checked(toy_plain):
    masks = PruneMask({"conv1": np.ones(3, dtype=bool)})
    with pytest.raises(ValidationError):
        apply_masks(toy_plain, masks)


def test_conv_flops_examples():
    stem = ConvLayer("c", np.zeros((64, 3, 7, 7), np.float32), (112, 112))
    assert conv_flops(stem) == 64 * 3 * 49 * 112 * 112 == 118_013_952
    pw = ConvLayer("p", np.zeros((64, 64, 1, 1), np.float32), (56, 56))
    assert conv_flops(pw) == 12_845_056
    with pytest.raises(ValidationError):
        conv_flops(pw, 0)


def test_model_flops_counts_classifier(toy_plain):
    f = model_flops(toy_plain)
    convs = 4 * 3 * 9 * 64 + 2 * (4 * 4 * 9 * 64)
    assert f["total"] == convs + 4 * 10
    assert f["per_layer"][-1] == {"name": "classifier", "flops": 40}


def test_pruned_flops_not_larger(toy_residual, rng):
    base = model_flops(toy_residual)["total"]
    assert model_flops(apply_masks(toy_residual, PruneMask.full(toy_residual)))["total"] == base
    for _ in range(20):
        masks = PruneMask.full(toy_residual)
        for layer in toy_residual.prunable_layers:
            keep = rng.random(layer.out_channels) < 0.6
            keep[rng.integers(layer.out_channels)] = True
            masks.out[layer.name] = keep
        pruned = apply_masks(toy_residual, masks)
        f = model_flops(pruned, reference=toy_residual)
        dropped = any(not m.all() for m in masks.out.values())
        assert (f["total"] < base) if dropped else (f["total"] == base)
        assert f["reduction"] == pytest.approx(1 - f["total"] / base)
        for layer in pruned.layers:
            if layer.input is not None:
                assert pruned[layer.input].out_channels == layer.in_channels
