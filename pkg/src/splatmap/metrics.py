"""Reconstruction quality metrics and the per-frame evaluation report."""
from __future__ import annotations

import math

import numpy as np

from .losses import ssim as _ssim

__all__ = ["psnr", "ssim", "depth_l1", "miou", "snap_to_palette", "evaluate"]


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """Peak SNR in dB for unit dynamic range; identical images give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    return _ssim(a, b)[0]


def depth_l1(rendered, gt, valid=None) -> float:
    """Mean absolute depth error over valid pixels, in centimeters."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check(rendered, gt)
    if valid is None:
        valid = np.isfinite(gt) & (gt > 0)
    if not np.any(valid):
        return 0.0
    return float(np.mean(np.abs(rendered[valid] - gt[valid]))) * 100.0


def _palette_arrays(palette):
    """Accepts [(label_id, name, rgb)] or an (K, 3) color array."""
    if isinstance(palette, np.ndarray):
        colors = np.asarray(palette, dtype=np.float64).reshape(-1, 3)
        return np.arange(len(colors)), colors
    ids = np.array([int(p[0]) for p in palette], dtype=np.int64)
    colors = np.array([p[2] for p in palette], dtype=np.float64).reshape(-1, 3)
    return ids, colors


def snap_to_palette(img, palette) -> tuple[np.ndarray, np.ndarray]:
    """Nearest palette entry (Euclidean in RGB): returns (label ids, snapped colors)."""
    ids, colors = _palette_arrays(palette)
    if len(colors) == 0:
        raise ValueError("palette is empty")
    img = np.asarray(img, dtype=np.float64)
    d = ((img[..., None, :] - colors) ** 2).sum(axis=-1)
    k = np.argmin(d, axis=-1)
    return ids[k], colors[k]


def miou(rendered_semantic, gt_labels, palette) -> tuple[float, dict]:
    """Mean IoU over classes present in ``gt_labels``; pixels labelled < 0 are ignored."""
    ids, _ = _palette_arrays(palette)
    if len(ids) == 0:
        raise ValueError("palette is empty")
    gt_labels = np.asarray(gt_labels)
    if gt_labels.shape != np.asarray(rendered_semantic).shape[:2]:
        raise ValueError("semantic image and label image differ in size")
    pred, _ = snap_to_palette(rendered_semantic, palette)
    known = gt_labels >= 0
    table = {}
    for c in ids:
        g = (gt_labels == c) & known
        if not g.any():
            continue
        p = (pred == c) & known
        table[int(c)] = float((g & p).sum() / (g | p).sum())
    if not table:
        return 0.0, table
    return float(np.mean(list(table.values()))), table


def evaluate(gmap, frames, palette=None, config=None, quantize: bool = True) -> dict:
    """Render every frame at full resolution and score it.

    With ``quantize`` the rendered RGB is rounded to 8 bits first, matching
    how ground-truth images are stored.
    """
    from .imageio import to_uint8
    from .renderer import RenderConfig, render

    config = config or RenderConfig()
    per_frame = []
    for f in frames:
        out = render(gmap, f.camera, config)
        rgb = to_uint8(out.rgb) / 255.0 if quantize else out.rgb
        rec = {
            "frame_id": int(f.frame_id),
            "psnr": psnr(rgb, f.rgb),
            "ssim": ssim(rgb, f.rgb),
            "depth_l1_cm": depth_l1(out.depth, f.depth, f.depth_valid),
        }
        if palette is not None and f.labels is not None:
            rec["miou"], _ = miou(out.semantic, f.labels, palette)
        per_frame.append(rec)
    keys = ["psnr", "ssim", "depth_l1_cm"] + (["miou"] if per_frame and "miou" in per_frame[0] else [])
    mean = {k: float(np.mean([r[k] for r in per_frame])) if per_frame else float("nan") for k in keys}
    return {"per_frame": per_frame, "mean": mean}
