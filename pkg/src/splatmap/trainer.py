"""Keyframe-driven map optimization: seeding, pyramid-level training steps, densify/prune."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .backward import ParamGradients, backward
from .core import FrameSet, GaussianMap
from .losses import LossBreakdown, loss_depth, loss_rgb, loss_semantic, loss_total
from .pyramid import LevelSchedule, PyramidSet, extract_pyramid
from .renderer import RenderConfig, render
from .sh import rgb_to_dc

logger = logging.getLogger(__name__)

__all__ = ["TrainConfig", "KeyframeStore", "Adam", "Trainer", "seed_from_keyframe", "densify_and_prune", "fit"]


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr_position: float = 2e-4        # multiplied by the scene extent
    lr_position_final: float = 2e-6  # exponential decay target, same units
    lr_radius: float = 5e-3          # on log(radius)
    lr_opacity: float = 5e-2         # on logit(opacity)
    lr_rgb: float = 2.5e-3
    lr_semantic: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    n_levels: int = 3
    schedule: str = "pyramid"        # "pyramid" or "fine" (level 0 only)
    coarse_weight: float = 0.6
    fine_weight: float = 0.6
    lambda_r: float = 0.2
    lambda_s: float = 0.2
    use_depth: bool = True
    use_semantic: bool = True
    ssim_sign: str = "dssim"
    steps_per_keyframe: int = 100
    keyframe_stride: int = 1
    seed_stride: int = 4
    seed_new_keyframes: bool = True
    seed_opacity: float = 0.7
    densify_every: int = 100
    densify_from: int = 500
    densify_until: int = 1500
    densify_grad_threshold: float = 1e-2   # mean world-space position-gradient norm
    prune_opacity: float = 0.05
    prune_radius_fraction: float = 0.5
    scene_extent: Optional[float] = None
    seed: int = 0
    tile_size: int = 16
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_semantic: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("lr_position", "lr_radius", "lr_opacity", "lr_rgb", "lr_semantic"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if not (0 <= self.lambda_r <= 1 and 0 <= self.lambda_s <= 1):
            raise ValueError("lambda_r and lambda_s must lie in [0, 1]")
        if self.schedule not in ("pyramid", "fine"):
            raise ValueError(f"unknown schedule '{self.schedule}'")
        if self.ssim_sign not in ("dssim", "raw"):
            raise ValueError(f"unknown ssim_sign '{self.ssim_sign}'")
        self.background_rgb = tuple(self.background_rgb)
        self.background_semantic = tuple(self.background_semantic)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def render_config(self) -> RenderConfig:
        return RenderConfig(tile_size=self.tile_size, background_rgb=self.background_rgb,
                            background_semantic=self.background_semantic, n_levels=self.n_levels)

    def level_schedule(self) -> LevelSchedule:
        return LevelSchedule(self.iterations, self.n_levels, self.coarse_weight, self.fine_weight,
                             fine_only=self.schedule == "fine")


class KeyframeStore:
    """Keyframes in arrival order with their precomputed pyramids."""

    def __init__(self, n_levels: int = 3):
        self.n_levels = n_levels
        self.frames: list[FrameSet] = []
        self.pyramids: list[PyramidSet] = []

    def add(self, frame: FrameSet) -> PyramidSet:
        if any(f.frame_id == frame.frame_id for f in self.frames):
            raise ValueError(f"duplicate keyframe id {frame.frame_id}")
        pyr = extract_pyramid(frame, self.n_levels)
        self.frames.append(frame)
        self.pyramids.append(pyr)
        return pyr

    def __len__(self):
        return len(self.frames)


class Adam:
    """Adam with one learning rate per parameter class and row-aligned state."""

    def __init__(self, lrs: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            lr = self.lrs[k]
            if lr == 0:
                continue
            p -= (lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)

    def reindex(self, rows: np.ndarray, n_fresh: int = 0) -> None:
        """Follow a map compaction; cloned rows (the last ``n_fresh``) start with zero moments."""
        for state in (self.m, self.v):
            for k, a in state.items():
                a = a[rows]
                if n_fresh:
                    a[-n_fresh:] = 0.0
                state[k] = a


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def scene_extent_from_frames(frames: list[FrameSet]) -> float:
    centers = np.stack([f.camera.center for f in frames])
    spread = 1.1 * float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
    depths = np.concatenate([f.depth[f.depth_valid] for f in frames])
    median_depth = float(np.median(depths)) if len(depths) else 1.0
    return max(spread, median_depth)


def seed_from_keyframe(frame: FrameSet, gmap: GaussianMap, stride: int = 4, config: TrainConfig | None = None,
                       iteration: int = 0, opacity: float | None = None) -> int:
    """Back-project grid pixels the map does not yet explain; returns the number added.

    A pixel is unexplained when the rendered transmittance exceeds 0.5 or the
    rendered depth, taken raw or opacity-normalized, misses the observation
    by more than 5 cm.
    """
    config = config or TrainConfig()
    opacity = config.seed_opacity if opacity is None else opacity
    h, w = frame.shape
    off = stride // 2
    ys, xs = np.mgrid[off:h:stride, off:w:stride]
    ys, xs = ys.ravel(), xs.ravel()
    keep = frame.depth_valid[ys, xs]
    if len(gmap) and keep.any():
        out = render(gmap, frame.camera, config.render_config())
        T = out.transmittance[ys, xs]
        d_obs = frame.depth[ys, xs]
        d_raw = out.depth[ys, xs]
        # observations may themselves be coverage-weighted (synthetic data), so accept either form
        err = np.minimum(np.abs(d_raw - d_obs), np.abs(d_raw / np.maximum(1.0 - T, 1e-12) - d_obs))
        keep &= (T > 0.5) | (err > 0.05)
    ys, xs = ys[keep], xs[keep]
    if len(ys) == 0:
        return 0
    cam = frame.camera
    d = frame.depth[ys, xs]
    pc = np.stack([(xs - cam.cx) * d / cam.fx, (ys - cam.cy) * d / cam.fy, d], axis=1)
    world = (pc - cam.translation) @ cam.rotation
    n = len(d)
    rgb = np.zeros((n, gmap.n_rgb_features))
    sem = np.zeros((n, gmap.n_sem_features))
    rgb[:, 0:3] = rgb_to_dc(frame.rgb[ys, xs])
    sem[:, 0:3] = rgb_to_dc(frame.semantic[ys, xs])
    gmap.append(world, d * stride / cam.f_mean, np.full(n, opacity), rgb, sem,
                keyframe_id=frame.frame_id, iteration=iteration)
    return n


def densify_and_prune(gmap: GaussianMap, grad_accum: np.ndarray, grad_count: np.ndarray, config: TrainConfig,
                      scene_extent: float, rng: np.random.Generator | None = None):
    """Prune faint or oversized primitives, clone high-gradient ones.

    Returns ``(added, removed, rows)`` where ``rows`` maps new indices to old
    ones (clones appear at the end).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(gmap)
    mean_grad = np.where(grad_count > 0, grad_accum / np.maximum(grad_count, 1), 0.0)
    prune = (gmap.opacities < config.prune_opacity) | (gmap.radii > config.prune_radius_fraction * scene_extent)
    clone = (mean_grad > config.densify_grad_threshold) & ~prune
    kept = np.flatnonzero(~prune)
    cloned = np.flatnonzero(clone)
    rows = np.concatenate([kept, cloned]).astype(np.int64)
    if len(rows) == n and not len(cloned):
        return 0, 0, rows
    gmap.compact(rows)
    if len(cloned):
        dirs = rng.normal(size=(len(cloned), 3))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
        gmap.positions[-len(cloned):] += 0.5 * gmap.radii[-len(cloned):, None] * dirs
    return len(cloned), int(prune.sum()), rows


class Trainer:
    """Owns the map, optimizer state and keyframe store for one mapping run."""

    def __init__(self, config: TrainConfig, gmap: GaussianMap | None = None, scene_extent: float | None = None):
        self.config = config
        self.map = gmap if gmap is not None else GaussianMap()
        self.store = KeyframeStore(config.n_levels)
        self.render_config = config.render_config()
        self.schedule = config.level_schedule()
        self.rng = np.random.default_rng(config.seed)
        self.scene_extent = scene_extent if scene_extent is not None else config.scene_extent
        self.optimizer = Adam({}, config.beta1, config.beta2, config.eps)
        self.grad_accum = np.zeros(len(self.map))
        self.grad_count = np.zeros(len(self.map))
        self._raw = None
        self.log: list[dict] = []

    # raw (unconstrained) parameters are the optimizer's view of the map
    def _sync_raw(self):
        m = self.map
        if self._raw is None or len(self._raw["position"]) != len(m):
            self._raw = {
                "position": m.positions.copy(),
                "radius": np.log(m.radii),
                "opacity": _logit(m.opacities),
                "rgb_feature": m.rgb_features.copy(),
                "semantic_feature": m.sem_features.copy(),
            }

    def _resize_state(self, rows: np.ndarray, n_fresh: int):
        self.optimizer.reindex(rows, n_fresh)
        self.grad_accum = np.zeros(len(self.map))
        self.grad_count = np.zeros(len(self.map))
        self._raw = None

    def add_keyframe(self, frame: FrameSet, iteration: int = 0) -> int:
        self.store.add(frame)
        added = 0
        if self.config.seed_new_keyframes:
            n0 = len(self.map)
            added = seed_from_keyframe(frame, self.map, self.config.seed_stride, self.config, iteration)
            if added:
                rows = np.concatenate([np.arange(n0), np.zeros(added, dtype=np.int64)])
                if n0 == 0:
                    self.optimizer.m, self.optimizer.v = {}, {}
                else:
                    self.optimizer.reindex(rows, added)
                self.grad_accum = np.concatenate([self.grad_accum, np.zeros(added)])
                self.grad_count = np.concatenate([self.grad_count, np.zeros(added)])
                self._raw = None
        if self.scene_extent is None:
            self.scene_extent = scene_extent_from_frames(self.store.frames)
        return added

    def _lrs(self, iteration: int) -> dict:
        c = self.config
        extent = self.scene_extent or 1.0
        frac = min(iteration / max(c.iterations - 1, 1), 1.0)
        if c.lr_position > 0 and c.lr_position_final > 0:
            lr_pos = np.exp((1 - frac) * np.log(c.lr_position) + frac * np.log(c.lr_position_final))
        else:
            lr_pos = c.lr_position
        return {"position": lr_pos * extent, "radius": c.lr_radius, "opacity": c.lr_opacity,
                "rgb_feature": c.lr_rgb, "semantic_feature": c.lr_semantic}

    def compute_loss(self, frame_index: int, level: int, with_grads: bool = True):
        c = self.config
        lvl = self.store.pyramids[frame_index][level]
        out = render(self.map, lvl.camera, self.render_config)
        rgb = loss_rgb(out.rgb, lvl.rgb, c.lambda_r, c.ssim_sign)
        dep = loss_depth(out.depth, lvl.depth, lvl.depth_valid) if c.use_depth else None
        sem = loss_semantic(out.semantic, lvl.semantic, c.lambda_s, c.ssim_sign) if c.use_semantic else None
        return out, loss_total(rgb, dep, sem, c.lambda_r, c.lambda_s, level)

    def step(self, iteration: int) -> LossBreakdown:
        if not len(self.store):
            raise RuntimeError("train_step needs at least one keyframe")
        k = int(self.rng.integers(len(self.store)))
        level = self.schedule.sample_level(iteration, self.rng)
        out, losses = self.compute_loss(k, level)
        if len(self.map):
            grads = backward(out, self.map, out.camera, self.render_config, losses.grad_rgb,
                             losses.grad_depth, losses.grad_semantic)
            self._apply(grads, iteration)
        return losses

    def _apply(self, grads: ParamGradients, iteration: int):
        m = self.map
        self._sync_raw()
        raw = self._raw
        g = {
            "position": grads.position,
            "radius": grads.radius * m.radii,
            "opacity": grads.opacity * m.opacities * (1.0 - m.opacities),
            "rgb_feature": grads.rgb_feature,
            "semantic_feature": grads.semantic_feature,
        }
        gnorm = np.linalg.norm(grads.position, axis=1)
        seen = gnorm > 0
        self.grad_accum[seen] += gnorm[seen]
        self.grad_count[seen] += 1

        self.optimizer.lrs = self._lrs(iteration)
        old_r, old_o = raw["radius"].copy(), raw["opacity"].copy()
        self.optimizer.step(raw, g)
        m.positions[:] = raw["position"]
        m.rgb_features[:] = raw["rgb_feature"]
        m.sem_features[:] = raw["semantic_feature"]
        # only rewrite rows that moved so a no-op step is bit-exact
        ch_r = raw["radius"] != old_r
        ch_o = raw["opacity"] != old_o
        m.radii[ch_r] = np.exp(raw["radius"][ch_r])
        m.opacities[ch_o] = _sigmoid(raw["opacity"][ch_o])

    def densify(self) -> tuple[int, int]:
        added, removed, rows = densify_and_prune(self.map, self.grad_accum, self.grad_count, self.config,
                                                 self.scene_extent or 1.0, self.rng)
        if added or removed:
            self._resize_state(rows, added)
        else:
            self.grad_accum[:] = 0
            self.grad_count[:] = 0
        return added, removed

    def record(self, iteration: int, losses: LossBreakdown) -> dict:
        rec = {"iteration": iteration, **losses.record(), "n_primitives": len(self.map)}
        self.log.append(rec)
        return rec


def train_step(trainer: Trainer, iteration: int) -> LossBreakdown:
    return trainer.step(iteration)


def fit(frames: Iterable[FrameSet], config: TrainConfig | None = None, initial_map: GaussianMap | None = None,
        log_path=None, callback: Callable | None = None, map_path=None) -> tuple[GaussianMap, list]:
    """Run the mapping loop over a keyframe stream.

    Keyframe ``k`` (after ``keyframe_stride`` subsampling) arrives at
    iteration ``k * steps_per_keyframe``; frames that would arrive after the
    last iteration are still seeded so the returned map covers the stream.
    ``callback(iteration, trainer)`` runs after every step.
    """
    config = config or TrainConfig()
    frames = list(frames)[:: max(config.keyframe_stride, 1)]
    if not frames:
        raise ValueError("fit needs a non-empty keyframe stream")
    trainer = Trainer(config, initial_map.copy() if initial_map is not None else None)
    log_fh = open(log_path, "w") if log_path else None
    try:
        next_frame = 0
        for it in range(config.iterations):
            while next_frame < len(frames) and next_frame * config.steps_per_keyframe <= it:
                trainer.add_keyframe(frames[next_frame], it)
                next_frame += 1
            losses = trainer.step(it)
            rec = trainer.record(it, losses)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if (config.densify_every > 0 and config.densify_from <= it < config.densify_until
                    and it > 0 and it % config.densify_every == 0):
                added, removed = trainer.densify()
                logger.debug("iteration %d: densify +%d -%d", it, added, removed)
            if callback is not None:
                callback(it, trainer)
        while next_frame < len(frames):
            trainer.add_keyframe(frames[next_frame], config.iterations)
            next_frame += 1
        if log_fh:
            from .metrics import psnr
            vals = [psnr(render(trainer.map, f.camera, trainer.render_config).rgb, f.rgb) for f in trainer.store.frames]
            log_fh.write(json.dumps({"event": "final", "iterations": config.iterations,
                                     "n_primitives": len(trainer.map),
                                     "train_psnr": float(np.mean(vals))}) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    if map_path is not None:
        from .ply import save_map
        save_map(trainer.map, map_path)
    return trainer.map, trainer.log
