"""Photometric, depth and semantic reconstruction losses with analytic pixel gradients.

The SSIM term enters as ``1 - SSIM`` (D-SSIM) so a perfect match is the
minimum. ``ssim_sign="raw"`` switches to the raw ``+SSIM`` form for
fidelity experiments; that form is not a sensible minimization target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["LossBreakdown", "ssim", "ssim_map", "loss_rgb", "loss_depth", "loss_semantic", "loss_total",
           "gaussian_window"]

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


@dataclass
class LossBreakdown:
    l_rgb: float
    l_depth: float
    l_semantic: float
    l_total: float
    lambda_r: float
    lambda_s: float
    level: int
    grad_rgb: np.ndarray | None = None
    grad_depth: np.ndarray | None = None
    grad_semantic: np.ndarray | None = None

    def record(self) -> dict:
        return dict(level=self.level, l_rgb=self.l_rgb, l_depth=self.l_depth, l_semantic=self.l_semantic,
                    l_total=self.l_total)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def _blur(img, w):
    """Window-weighted sum over both spatial axes; out-of-image taps contribute zero."""
    out = correlate1d(img, w, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, w, axis=1, mode="constant", cval=0.0)


def _norm(shape, w):
    h, wd = shape[:2]
    nh = correlate1d(np.ones(h), w, mode="constant", cval=0.0)
    nw = correlate1d(np.ones(wd), w, mode="constant", cval=0.0)
    z = nh[:, None] * nw[None, :]
    return z if len(shape) == 2 else z[:, :, None]


def _stats(a, b, w):
    z = _norm(a.shape, w)
    mu_a = _blur(a, w) / z
    mu_b = _blur(b, w) / z
    var_a = _blur(a * a, w) / z - mu_a ** 2
    var_b = _blur(b * b, w) / z - mu_b ** 2
    cov = _blur(a * b, w) / z - mu_a * mu_b
    return z, mu_a, mu_b, var_a, var_b, cov


def ssim_map(a: np.ndarray, b: np.ndarray, window: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel (per-channel) SSIM with edge-cropped, renormalized windows."""
    w = gaussian_window() if window is None else window
    _, mu_a, mu_b, var_a, var_b, cov = _stats(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), w)
    return ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / ((mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2))


def ssim(a: np.ndarray, b: np.ndarray, window: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean SSIM over pixels and channels, and its gradient with respect to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    w = gaussian_window() if window is None else window
    z, mu_a, mu_b, var_a, var_b, cov = _stats(a, b, w)
    num1 = 2 * mu_a * mu_b + C1
    num2 = 2 * cov + C2
    den1 = mu_a ** 2 + mu_b ** 2 + C1
    den2 = var_a + var_b + C2
    s = num1 * num2 / (den1 * den2)
    n = s.size

    d_mu = (2 * mu_b * num2 / (den1 * den2) - 2 * mu_a * s / den1) / n
    d_var = -s / den2 / n
    d_cov = 2 * num1 / (den1 * den2) / n
    # adjoint of the normalized window average: symmetric kernel, so correlate again
    grad = (_blur((d_mu - 2 * d_var * mu_a - d_cov * mu_b) / z, w)
            + 2 * a * _blur(d_var / z, w)
            + b * _blur(d_cov / z, w))
    return float(s.mean()), grad


def _l1_ssim(rendered, gt, lam, ssim_sign):
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same(rendered, gt)
    diff = rendered - gt
    l1 = float(np.abs(diff).mean())
    g = (1 - lam) * np.sign(diff) / diff.size
    if lam == 0:
        return (1 - lam) * l1, g
    s, ds = ssim(rendered, gt)
    if ssim_sign == "raw":
        return (1 - lam) * l1 + lam * s, g + lam * ds
    return (1 - lam) * l1 + lam * (1 - s), g - lam * ds


def loss_rgb(rendered, gt, lambda_r: float = 0.2, ssim_sign: str = "dssim") -> tuple[float, np.ndarray]:
    return _l1_ssim(rendered, gt, lambda_r, ssim_sign)


def loss_semantic(rendered, gt, lambda_s: float = 0.2, ssim_sign: str = "dssim") -> tuple[float, np.ndarray]:
    return _l1_ssim(rendered, gt, lambda_s, ssim_sign)


def loss_depth(rendered, gt, valid=None) -> tuple[float, np.ndarray]:
    """Mean absolute depth error over valid pixels; zero loss and gradient elsewhere."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same(rendered, gt)
    if valid is None:
        valid = np.isfinite(gt) & (gt > 0)
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    grad = np.zeros_like(rendered)
    if n == 0:
        return 0.0, grad
    diff = np.where(valid, rendered - np.where(valid, gt, 0.0), 0.0)
    grad[valid] = np.sign(diff[valid]) / n
    return float(np.abs(diff).sum() / n), grad


def loss_total(rgb_part, depth_part, semantic_part, lambda_r=0.2, lambda_s=0.2, level=0, levels=None) -> LossBreakdown:
    """Sum the three terms; each part is ``(loss, pixel_grad)``, ``None`` disables a term.

    ``levels`` optionally gives the pyramid level each part was computed at.
    """
    if levels is not None and len({lv for lv in levels if lv is not None}) > 1:
        raise ValueError(f"loss components computed at different pyramid levels: {levels}")

    def unpack(part):
        return (0.0, None) if part is None else (float(part[0]), part[1])

    lr, gr = unpack(rgb_part)
    ld, gd = unpack(depth_part)
    ls, gs = unpack(semantic_part)
    return LossBreakdown(lr, ld, ls, lr + ld + ls, lambda_r, lambda_s, level, gr, gd, gs)
