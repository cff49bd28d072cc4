"""Smoke tests for the python bindings; the C++ suites carry the real load."""

import math

import numpy as np
import pytest

import flashdet as fd


def test_model_build_is_deterministic():
    a = fd.build_model(3)
    b = fd.build_model(3)
    assert a.weight_count == 286128
    patch = np.zeros((32, 32, 3), dtype=np.float32)
    pa = fd.forward_patch(a, patch)
    pb = fd.forward_patch(b, patch)
    assert pa["logits"] == pb["logits"]
    assert pa["label"] in (0, 1)
    assert pa["probs"][0] + pa["probs"][1] == pytest.approx(1.0, abs=1e-6)


def test_patch_count_formulas():
    assert fd.count_patches_dense(64) == 33 * 33
    assert fd.count_patches_flash(64) == 4
    assert fd.count_patches_dense(512) == 481 * 481
    assert fd.count_patches_flash(512) == 256
    with pytest.raises(ValueError):
        fd.count_patches_dense(16)


def test_mirror_pad_reflects_without_edge_repeat():
    row = np.array([[[1.0], [2.0], [3.0]]] * 3, dtype=np.float32)
    padded = fd.mirror_pad(row, 1)
    assert padded.shape == (5, 5, 1)
    assert list(padded[1, :, 0]) == [2.0, 1.0, 2.0, 3.0, 2.0]


def test_generate_core_reproducible():
    img1, mask1 = fd.generate_core(11, side=128, tumor_fraction=0.5)
    img2, mask2 = fd.generate_core(11, side=128, tumor_fraction=0.5)
    assert np.array_equal(img1, img2)
    assert np.array_equal(mask1, mask2)
    assert img1.shape == (128, 128, 3)
    assert mask1.dtype == np.uint8


def test_flash_matches_dense_at_tile_aligned_sites():
    model = fd.build_model(21)
    img, _ = fd.generate_core(22, side=96, tumor_fraction=0.4)
    flash = fd.flash_infer(model, img)
    assert flash.conv_stack_invocations == 9
    for a in range(3):
        for b in range(3):
            tile = img[a * 32:(a + 1) * 32, b * 32:(b + 1) * 32, :]
            dense = fd.forward_patch(model, tile)
            assert flash.probs[a * 8, b * 8] == pytest.approx(dense["probs"][1], rel=1e-5)
            assert flash.labels[a * 8, b * 8] == dense["label"]


def test_feature_head_composition_equals_forward():
    model = fd.build_model(31)
    rng = np.random.default_rng(4)
    patch = rng.random((32, 32, 3), dtype=np.float32)
    features = fd.forward_features(model, patch)
    assert features.shape == (8, 8, 64)
    assert fd.head_classify(model, features)["logits"] == fd.forward_patch(model, patch)["logits"]


def test_checkpoint_roundtrip(tmp_path):
    model = fd.build_model(41)
    path = str(tmp_path / "model.flsh")
    fd.save_model(model, path)
    loaded = fd.load_model(path)
    patch = np.full((32, 32, 3), 0.25, dtype=np.float32)
    assert fd.forward_patch(model, patch)["logits"] == fd.forward_patch(loaded, patch)["logits"]


def test_metrics_and_auc():
    pred = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    gt = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    tp, fp, tn, fn = fd.confusion(pred, gt)
    assert (tp, fp, tn, fn) == (1, 1, 1, 1)
    assert fd.sensitivity(90, 0, 0, 10) == pytest.approx(0.9)
    assert fd.f1_score(50, 50, 0, 50) == pytest.approx(0.5)
    probs = np.array([0.9, 0.8, 0.6, 0.4, 0.2, 0.1], dtype=np.float32)
    labels = np.array([1, 1, 1, 0, 0, 0], dtype=np.uint8)
    assert fd.roc_auc(probs, labels) == pytest.approx(1.0)


def test_augment_and_short_training_run():
    regions = fd.generate_training_regions(51, 1, 1)
    assert len(regions) == 2
    patches, labels = [], []
    for image, label in regions:
        assert image.shape == (300, 300, 3)
        for p in fd.augment_region(image, label=label, crops_per_angle=1, seed=52):
            patches.append(p)
            labels.append(label)
    assert len(patches) == 24  # 12 angles x 1 crop x 2 regions
    model = fd.build_model(53)
    history = fd.train_patches(model, patches, labels, epochs=3, batch_size=8, seed=54)
    assert len(history) == 3
    assert math.isfinite(history[-1]["mean_loss"])
