"""Multi-level feature pyramids and the coarse-to-fine level sampling schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, FrameSet


@dataclass
class PyramidLevel:
    rgb: np.ndarray
    depth: np.ndarray
    depth_valid: np.ndarray
    semantic: np.ndarray
    labels: np.ndarray | None
    camera: Camera


@dataclass
class PyramidSet:
    levels: list
    frame_id: int

    @property
    def n(self) -> int:
        return len(self.levels)

    def __getitem__(self, i) -> PyramidLevel:
        return self.levels[i]


def _pad_even(img: np.ndarray, fill=0.0):
    h, w = img.shape[:2]
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return img
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, constant_values=fill)


def _blocks(img: np.ndarray) -> np.ndarray:
    """View an even-sized image as (H/2, W/2, 4, ...) 2x2 blocks."""
    h, w = img.shape[:2]
    b = img.reshape(h // 2, 2, w // 2, 2, *img.shape[2:])
    b = np.moveaxis(b, 2, 1)
    return b.reshape(h // 2, w // 2, 4, *img.shape[2:])


def downsample_box(img: np.ndarray) -> np.ndarray:
    """2x2 mean; blocks hanging over an odd edge average only their in-image pixels."""
    inside = _blocks(_pad_even(np.ones(img.shape[:2])))
    vals = _blocks(_pad_even(img))
    count = inside.sum(axis=2)
    if img.ndim == 3:
        count = count[..., None]
    return vals.sum(axis=2) / count


def downsample_masked(depth: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 mean over valid pixels only; an all-invalid block stays invalid."""
    v = _blocks(_pad_even(valid.astype(np.float64)))
    d = _blocks(_pad_even(np.where(valid, depth, 0.0)))
    count = v.sum(axis=2)
    out_valid = count > 0
    out = np.where(out_valid, d.sum(axis=2) / np.maximum(count, 1), 0.0)
    return out, out_valid


def downsample_nearest(img: np.ndarray) -> np.ndarray:
    """Top-left pixel of each 2x2 block."""
    return img[::2, ::2].copy()


def extract_pyramid(frame: FrameSet, n: int = 3) -> PyramidSet:
    if n < 1:
        raise ValueError(f"pyramid needs at least one level, got {n}")
    lvl = PyramidLevel(frame.rgb, frame.depth, frame.depth_valid, frame.semantic, frame.labels, frame.camera)
    levels = [lvl]
    for i in range(1, n):
        depth, valid = downsample_masked(lvl.depth, lvl.depth_valid)
        lvl = PyramidLevel(
            rgb=downsample_box(lvl.rgb),
            depth=depth,
            depth_valid=valid,
            semantic=downsample_nearest(lvl.semantic),
            labels=None if lvl.labels is None else downsample_nearest(lvl.labels),
            camera=frame.camera.scaled(i),
        )
        levels.append(lvl)
    return PyramidSet(levels, frame.frame_id)


@dataclass
class LevelSchedule:
    """Progress-weighted random level choice.

    Training is split into phases at ``boundaries`` (fractions of
    ``total_iterations``): the coarsest level gets ``coarse_weight`` in the
    first phase, all levels are equally likely in the middle phase, and
    level 0 gets ``fine_weight`` in the last. Leftover mass is shared evenly.
    """

    total_iterations: int
    n_levels: int = 3
    coarse_weight: float = 0.6
    fine_weight: float = 0.6
    boundaries: tuple = (1.0 / 3.0, 2.0 / 3.0)
    fine_only: bool = field(default=False)

    def probabilities(self, iteration: int) -> np.ndarray:
        n = self.n_levels
        if n == 1 or self.fine_only:
            p = np.zeros(n)
            p[0] = 1.0
            return p
        progress = iteration / max(self.total_iterations, 1)
        p = np.full(n, 1.0 / n)
        if progress < self.boundaries[0]:
            p = np.full(n, (1.0 - self.coarse_weight) / (n - 1))
            p[-1] = self.coarse_weight
        elif progress >= self.boundaries[1]:
            p = np.full(n, (1.0 - self.fine_weight) / (n - 1))
            p[0] = self.fine_weight
        return p

    def sample_level(self, iteration: int, rng: np.random.Generator) -> int:
        p = self.probabilities(iteration)
        # one uniform draw per call keeps rng consumption independent of n_levels
        u = rng.random()
        return int(min(np.searchsorted(np.cumsum(p), u, side="right"), self.n_levels - 1))


def sample_level(schedule: LevelSchedule, iteration: int, rng: np.random.Generator) -> int:
    return schedule.sample_level(iteration, rng)
