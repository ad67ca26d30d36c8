"""Reproducible runs on the synthetic A1 scene used by the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import GaussianMap
from .datasets import make_a1_spec, perturb_map, synthesize
from .metrics import evaluate
from .renderer import render
from .trainer import TrainConfig, Trainer, fit

__all__ = ["a1_config", "A1Run", "run_a1", "level0_loss"]


def a1_config(**overrides) -> TrainConfig:
    """Training config tuned for the desk-scale A1 scene (learning rates only; loss weights are defaults)."""
    base = dict(iterations=2000, lr_position=1e-3, lr_position_final=3e-5, lr_opacity=2e-2, lr_radius=2e-3,
                n_levels=3, lambda_r=0.2, lambda_s=0.2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class A1Run:
    gmap: GaussianMap
    log: list
    metrics: dict
    frames: list          # training frames (possibly noisy)
    clean: list           # noiseless ground truth
    spec: object
    curve: list = field(default_factory=list)   # (iteration, level-0 loss) checkpoints


def level0_loss(trainer: Trainer) -> float:
    """Total loss at full resolution averaged over every keyframe, without updating anything."""
    vals = [trainer.compute_loss(k, 0)[1].l_total for k in range(len(trainer.store))]
    return float(np.mean(vals))


def run_a1(config: TrainConfig | None = None, scene_seed: int = 0, perturb_seed: int = 1, texture_cluster: int = 0,
           label_flip: float = 0.0, depth_dropout: float = 0.0, curve_every: int = 0, map_path=None) -> A1Run:
    config = config or a1_config()
    spec = make_a1_spec(seed=scene_seed, texture_cluster=texture_cluster, label_flip=label_flip,
                        depth_dropout=depth_dropout)
    frames, clean = synthesize(spec)
    init = perturb_map(spec.gmap, seed=perturb_seed)
    curve = []

    def callback(it, trainer):
        if curve_every and ((it + 1) % curve_every == 0):
            curve.append((it + 1, level0_loss(trainer)))

    gmap, log = fit(frames, config, initial_map=init, callback=callback if curve_every else None, map_path=map_path)
    metrics = evaluate(gmap, clean, spec.palette)["mean"]
    return A1Run(gmap, log, metrics, frames, clean, spec, curve)


def dropped_depth_error_cm(run: A1Run) -> float:
    """Median |rendered - noiseless depth| over pixels whose depth was dropped from the input, in cm."""
    errs = []
    for noisy, clean in zip(run.frames, run.clean):
        dropped = clean.depth_valid & ~noisy.depth_valid
        out = render(run.gmap, clean.camera)
        errs.append(np.abs(out.depth - clean.depth)[dropped])
    return float(np.median(np.concatenate(errs))) * 100.0
