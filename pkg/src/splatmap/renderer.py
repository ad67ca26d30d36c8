"""Tile-binned front-to-back compositing of RGB, depth and semantic channels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Camera, GaussianMap
from .projection import NEAR_CLIP, ProjectedBatch, project_batch
from .sh import eval_sh, view_dirs

__all__ = ["RenderConfig", "RenderOutput", "render", "render_naive", "render_at_level", "save_render_pngs"]


@dataclass
class RenderConfig:
    tile_size: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    alpha_clamp: float = 0.999
    transmittance_floor: float = 1e-7   # deviation vs. the no-stop oracle is bounded by floor * |value - background|
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_depth: float = 0.0
    background_semantic: tuple = (0.0, 0.0, 0.0)
    near_clip: float = NEAR_CLIP
    n_levels: int = 3

    def __post_init__(self):
        if not (0 < self.alpha_cutoff < self.alpha_clamp <= 1):
            raise ValueError("need 0 < alpha_cutoff < alpha_clamp <= 1")
        if self.tile_size < 1:
            raise ValueError("tile_size must be positive")

    @property
    def background(self) -> np.ndarray:
        return np.array([*self.background_rgb, self.background_depth, *self.background_semantic], dtype=np.float64)


@dataclass
class _Primitives2D:
    """Per-view primitive quantities consumed by the compositor and its adjoint."""

    proj: ProjectedBatch
    opacity: np.ndarray
    values: np.ndarray        # (N, 7) clamped rgb, depth, clamped semantic
    rgb_raw: np.ndarray       # unclamped SH colors
    sem_raw: np.ndarray
    dirs: np.ndarray
    offsets: np.ndarray


@dataclass
class RenderOutput:
    rgb: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    transmittance: np.ndarray
    camera: Camera
    config: RenderConfig
    n_primitives: int
    _prims: _Primitives2D = field(repr=False)
    _entries: np.ndarray = field(repr=False)
    _tile_start: np.ndarray = field(repr=False)
    _last: np.ndarray = field(repr=False)
    _tile: int = field(repr=False, default=16)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.transmittance

    def contributors(self, row: int, col: int) -> list[tuple[int, float]]:
        """(primitive id, composited weight) in compositing order for one pixel."""
        ntx = -(-self.camera.width // self._tile)
        t = (row // self._tile) * ntx + col // self._tile
        p = self._prims
        out = []
        T = 1.0
        for k in range(self._tile_start[t], self._last[row, col]):
            i = int(self._entries[k])
            d2 = (col - p.proj.mu2d[i, 0]) ** 2 + (row - p.proj.mu2d[i, 1]) ** 2
            a = p.opacity[i] * np.exp(-d2 / (2.0 * p.proj.r2d[i] ** 2))
            if a < self.config.alpha_cutoff:
                continue
            a = min(a, self.config.alpha_clamp)
            out.append((i, a * T))
            T *= 1.0 - a
        return out

    def contributor_counts(self) -> np.ndarray:
        h, w = self.shape
        return np.array([[len(self.contributors(r, c)) for c in range(w)] for r in range(h)])


def prepare_primitives(gmap: GaussianMap, camera: Camera, config: RenderConfig) -> _Primitives2D:
    proj = project_batch(gmap.positions, gmap.radii, gmap.opacities, camera, config.alpha_cutoff, config.near_clip)
    dirs, offsets = view_dirs(gmap.positions, camera.center)
    rgb_raw = eval_sh(gmap.sh_degree_rgb, gmap.rgb_features, dirs)
    sem_raw = eval_sh(gmap.sh_degree_sem, gmap.sem_features, dirs)
    values = np.concatenate([np.clip(rgb_raw, 0.0, 1.0), proj.depth[:, None], np.clip(sem_raw, 0.0, 1.0)], axis=1)
    return _Primitives2D(proj, gmap.opacities.copy(), np.ascontiguousarray(values), rgb_raw, sem_raw, dirs, offsets)


def _depth_order(depth: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    ids = np.flatnonzero(candidates)
    return ids[np.lexsort((ids, depth[ids]))].astype(np.int64)


def _split(image, trans, camera, config, n, prims, entries, tile_start, last, tile):
    return RenderOutput(
        rgb=np.ascontiguousarray(image[:, :, 0:3]),
        depth=np.ascontiguousarray(image[:, :, 3]),
        semantic=np.ascontiguousarray(image[:, :, 4:7]),
        transmittance=trans,
        camera=camera,
        config=config,
        n_primitives=n,
        _prims=prims,
        _entries=entries,
        _tile_start=tile_start,
        _last=last,
        _tile=tile,
    )


def render(gmap: GaussianMap, camera: Camera, config: RenderConfig | None = None) -> RenderOutput:
    config = config or RenderConfig()
    prims = prepare_primitives(gmap, camera, config)
    proj = prims.proj
    order = _depth_order(proj.depth, proj.visible)
    entries, tile_start = _kernels.bin_tiles(order, proj.mu2d, proj.support, camera.width, camera.height,
                                             config.tile_size)
    image, trans, last = _kernels.forward_tiles(
        entries, tile_start, proj.mu2d, proj.r2d, gmap.opacities, prims.values, config.background,
        camera.width, camera.height, config.tile_size,
        config.alpha_cutoff, config.alpha_clamp, config.transmittance_floor)
    return _split(image, trans, camera, config, len(gmap), prims, entries, tile_start, last, config.tile_size)


def render_naive(gmap: GaussianMap, camera: Camera, config: RenderConfig | None = None) -> RenderOutput:
    """Untiled reference: every pixel composites every in-front primitive, no early termination.

    The (depth, id) order is pixel independent, so one global sort serves all pixels.
    """
    config = config or RenderConfig()
    prims = prepare_primitives(gmap, camera, config)
    proj = prims.proj
    order = _depth_order(proj.depth, proj.depth > config.near_clip)
    image, trans = _kernels.naive_render(order, proj.mu2d, proj.r2d, gmap.opacities, prims.values,
                                         config.background, camera.width, camera.height,
                                         config.alpha_cutoff, config.alpha_clamp)
    tile = max(camera.width, camera.height)
    last = np.full((camera.height, camera.width), len(order), dtype=np.int64)
    return _split(image, trans, camera, config, len(gmap), prims, order,
                  np.array([0, len(order)], dtype=np.int64), last, tile)


def render_at_level(gmap: GaussianMap, camera: Camera, level: int, config: RenderConfig | None = None,
                    n_levels: int | None = None) -> RenderOutput:
    config = config or RenderConfig()
    n = config.n_levels if n_levels is None else n_levels
    if not 0 <= level < n:
        raise IndexError(f"pyramid level {level} out of range for {n} levels")
    return render(gmap, camera.scaled(level), config)


def save_render_pngs(out: RenderOutput, directory, channels=("rgb", "depth", "semantic"),
                     depth_scale: float = 5000.0, prefix: str = "") -> list:
    """Write 8-bit RGB/semantic and 16-bit depth PNGs; returns the written paths."""
    from pathlib import Path

    from .imageio import write_depth_png, write_rgb_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for ch in channels:
        path = directory / f"{prefix}{ch}.png"
        if ch == "rgb":
            write_rgb_png(path, out.rgb)
        elif ch == "semantic":
            write_rgb_png(path, out.semantic)
        elif ch == "depth":
            write_depth_png(path, out.depth, depth_scale)
        else:
            raise ValueError(f"unknown channel '{ch}'")
        written.append(path)
    return written
