import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatmap.core import GaussianMap
from splatmap.metrics import depth_l1, evaluate, miou, psnr, snap_to_palette, ssim

PALETTE = [(0, "a", (1.0, 0.0, 0.0)), (1, "b", (0.0, 1.0, 0.0)), (2, "c", (0.0, 0.0, 1.0))]


def test_psnr_cases():
    x = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(x, x) == math.inf
    y = np.full((8, 8, 3), 0.5)
    assert psnr(y, y + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(y, y + 1 / 255) == pytest.approx(48.13, abs=0.01)


@given(st.integers(0, 2**32 - 1))
def test_psnr_direct_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(5, 7, 3)), rng.uniform(size=(5, 7, 3))
    mse = sum((a.ravel()[i] - b.ravel()[i]) ** 2 for i in range(a.size)) / a.size
    assert psnr(a, b) == pytest.approx(-10 * math.log10(mse))
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)


def test_depth_l1_cases():
    d = np.random.default_rng(1).uniform(1, 3, (6, 6))
    assert depth_l1(d, d) == 0.0
    assert depth_l1(d + 0.01, d) == pytest.approx(1.0)
    valid = np.zeros((6, 6), bool)
    valid[::2] = True
    r = d + np.arange(36).reshape(6, 6) * 1e-3
    expected = np.mean([abs(r[i, j] - d[i, j]) for i in range(6) for j in range(6) if valid[i, j]]) * 100
    assert depth_l1(r, d, valid) == pytest.approx(expected)


def colors(labels):
    return np.array([PALETTE[k][2] for k in labels.ravel()]).reshape(*labels.shape, 3)


def test_miou_cases():
    labels = np.array([[0, 0], [1, 1]])
    assert miou(colors(labels), labels, PALETTE)[0] == 1.0
    swapped = 1 - labels
    assert miou(colors(swapped), labels, PALETTE)[0] == 0.0


@given(st.integers(0, 2**32 - 1))
def test_miou_brute_force(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 3, (6, 5))
    pred = np.where(rng.uniform(size=gt.shape) < 0.3, rng.integers(0, 3, gt.shape), gt)
    noisy = colors(pred) + rng.uniform(-0.2, 0.2, (6, 5, 3))
    ious = []
    for c in range(3):
        inter = sum(1 for i in range(6) for j in range(5) if gt[i, j] == c and pred[i, j] == c)
        union = sum(1 for i in range(6) for j in range(5) if gt[i, j] == c or pred[i, j] == c)
        if any(gt[i, j] == c for i in range(6) for j in range(5)):
            ious.append(inter / union)
    value, table = miou(noisy, gt, PALETTE)
    assert value == pytest.approx(np.mean(ious)) and len(table) == len(ious)
    assert miou(colors(gt), gt, PALETTE)[0] == 1.0


def test_snap_to_palette():
    ids, snapped = snap_to_palette(np.array([[[0.9, 0.2, 0.1], [0.1, 0.1, 0.8]]]), PALETTE)
    assert ids.tolist() == [[0, 2]] and np.array_equal(snapped[0, 1], [0, 0, 1])


def test_self_consistent_map(small_a1):
    spec, frames = small_a1
    report = evaluate(spec.gmap, frames, spec.palette)
    m = report["mean"]
    assert m["psnr"] >= 60 and m["miou"] == 1.0 and m["depth_l1_cm"] <= 0.01
    for k in m:
        assert m[k] == pytest.approx(np.mean([r[k] for r in report["per_frame"]]))


def test_empty_map_finite(small_a1):
    spec, frames = small_a1
    m = evaluate(GaussianMap(), frames, spec.palette)["mean"]
    assert all(np.isfinite(v) for v in m.values()) and m["psnr"] < 20
