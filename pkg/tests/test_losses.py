import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatmap.losses import (C1, C2, gaussian_window, loss_depth, loss_rgb, loss_semantic, loss_total, ssim,
                             ssim_map)


def brute_ssim(a, b, size=11, sigma=1.5):
    """Per-pixel windowed SSIM by direct summation, windows cropped and renormalized at the border."""
    h, w = a.shape
    half = size // 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            ys = slice(max(0, y - half), min(h, y + half + 1))
            xs = slice(max(0, x - half), min(w, x + half + 1))
            wy = g[ys.start - y + half: ys.stop - y + half]
            wx = g[xs.start - x + half: xs.stop - x + half]
            wgt = np.outer(wy, wx)
            wgt /= wgt.sum()
            pa, pb = a[ys, xs], b[ys, xs]
            ma, mb = (wgt * pa).sum(), (wgt * pb).sum()
            va = (wgt * (pa - ma) ** 2).sum()
            vb = (wgt * (pb - mb) ** 2).sum()
            cov = (wgt * (pa - ma) * (pb - mb)).sum()
            out[y, x] = (2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2))
    return out


def test_window_normalized_and_symmetric():
    w = gaussian_window()
    assert len(w) == 11 and w.sum() == pytest.approx(1.0) and np.allclose(w, w[::-1])


@given(st.integers(0, 2**32 - 1))
def test_ssim_identity(seed):
    x = np.random.default_rng(seed).uniform(size=(9, 13, 3))
    s, _ = ssim(x, x)
    assert s == pytest.approx(1.0, abs=1e-12)


def test_constant_images_zero_variance_closed_form():
    d = 0.01
    a = np.full((16, 16), 0.5)
    s, _ = ssim(a, a + d)
    assert s == pytest.approx((2 * 0.5 * (0.5 + d) + C1) / (0.25 + (0.5 + d) ** 2 + C1), abs=1e-9)


def test_ssim_matches_brute_force_window():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=(32, 32)), rng.uniform(size=(32, 32))
    assert np.abs(ssim_map(a, b) - brute_ssim(a, b)).max() <= 1e-6


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(12, 10, 2)), rng.uniform(size=(12, 10, 2))
    _, g = ssim(a, b)
    h = 1e-6
    for idx in [(0, 0, 0), (5, 4, 1), (11, 9, 0), (6, 0, 1)]:
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        num = (ssim(ap, b)[0] - ssim(am, b)[0]) / (2 * h)
        assert g[idx] == pytest.approx(num, rel=1e-6, abs=1e-10)


def test_ssim_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(20, 20, 3)), rng.uniform(size=(20, 20, 3))
    assert ssim(a, b)[0] == pytest.approx(ssim(b, a)[0], abs=1e-14)


def test_loss_rgb_closed_forms():
    x = np.random.default_rng(3).uniform(size=(8, 8, 3))
    assert loss_rgb(x, x)[0] == pytest.approx(0.0, abs=1e-12)
    assert loss_rgb(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5), lambda_r=0.0)[0] == 0.5


@pytest.mark.parametrize("fn", [loss_rgb, loss_semantic])
def test_recomposition_oracle(fn):
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    expected = 0.8 * np.abs(a - b).mean() + 0.2 * (1 - ssim(a, b)[0])
    assert fn(a, b, 0.2)[0] == pytest.approx(expected, rel=1e-14)


def test_raw_ssim_sign_variant():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    expected = 0.8 * np.abs(a - b).mean() + 0.2 * ssim(a, b)[0]
    assert loss_semantic(a, b, 0.2, ssim_sign="raw")[0] == pytest.approx(expected)


def test_loss_rgb_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    a, b = rng.uniform(size=(10, 10, 3)), rng.uniform(size=(10, 10, 3))
    _, g = loss_rgb(a, b, 0.2)
    h = 1e-7
    for idx in [(0, 0, 0), (4, 7, 2), (9, 9, 1)]:
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        assert g[idx] == pytest.approx((loss_rgb(ap, b)[0] - loss_rgb(am, b)[0]) / (2 * h), rel=1e-5)


def test_loss_depth_cases():
    z, g = loss_depth(np.ones((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), bool))
    assert z == 0.0 and np.all(g == 0)
    valid = np.zeros((3, 3), bool)
    valid[1, 1] = True
    gt = np.zeros((3, 3))
    gt[1, 1] = 1.5
    z, g = loss_depth(np.full((3, 3), 2.0), gt, valid)
    assert z == 0.5 and g[1, 1] == 1.0 and g.sum() == 1.0


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_loss_depth_brute_force(seed):
    rng = np.random.default_rng(seed)
    r, gt = rng.uniform(0, 5, (7, 6)), rng.uniform(0, 5, (7, 6))
    valid = rng.uniform(size=(7, 6)) < 0.6
    z, _ = loss_depth(r, gt, valid)
    terms = [abs(r[i, j] - gt[i, j]) for i in range(7) for j in range(6) if valid[i, j]]
    assert z == pytest.approx(sum(terms) / len(terms) if terms else 0.0)


def test_loss_total():
    assert loss_total((0.1, None), (0.2, None), (0.3, None)).l_total == pytest.approx(0.6)
    assert loss_total((0.0, None), (0.0, None), (0.0, None)).l_total == 0.0
    assert loss_total((0.1, None), None, None).l_total == 0.1
    with pytest.raises(ValueError):
        loss_total((0.1, None), (0.2, None), None, levels=(0, 1, None))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_loss_total_sums(a, b, c):
    assert loss_total((a, None), (b, None), (c, None)).l_total == a + b + c
