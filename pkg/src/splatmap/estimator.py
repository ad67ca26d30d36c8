"""scikit-learn style wrapper around the mapping loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import Camera, FrameSet
from .metrics import psnr
from .renderer import render
from .trainer import TrainConfig, fit


class SplatMapper(BaseEstimator):
    """Fit a Gaussian map to posed RGB-D-semantic frames; predict renders for cameras.

    ``X`` for ``fit`` and ``score`` is a sequence of ``FrameSet``; ``predict``
    also accepts bare ``Camera`` objects. Any ``TrainConfig`` field not exposed
    here can go in ``config``.
    """

    def __init__(self, iterations=2000, n_levels=3, schedule="pyramid", lambda_r=0.2, lambda_s=0.2,
                 use_depth=True, use_semantic=True, random_state=0, config=None, initial_map=None):
        self.iterations = iterations
        self.n_levels = n_levels
        self.schedule = schedule
        self.lambda_r = lambda_r
        self.lambda_s = lambda_s
        self.use_depth = use_depth
        self.use_semantic = use_semantic
        self.random_state = random_state
        self.config = config
        self.initial_map = initial_map

    def _train_config(self) -> TrainConfig:
        d = dict(self.config or {})
        d.update(iterations=self.iterations, n_levels=self.n_levels, schedule=self.schedule,
                 lambda_r=self.lambda_r, lambda_s=self.lambda_s, use_depth=self.use_depth,
                 use_semantic=self.use_semantic, seed=int(self.random_state or 0))
        return TrainConfig.from_dict(d)

    @staticmethod
    def _frames(X) -> list:
        frames = list(X)
        if not frames:
            raise ValueError("expected a non-empty sequence of FrameSet")
        for f in frames:
            if not isinstance(f, FrameSet):
                raise TypeError(f"expected FrameSet, got {type(f).__name__}")
        return frames

    def fit(self, X, y=None):
        config = self._train_config()
        self.map_, self.log_ = fit(self._frames(X), config, initial_map=self.initial_map)
        self.config_ = config
        self.n_primitives_ = len(self.map_)
        return self

    def predict(self, X) -> list:
        """Render outputs, one per camera or frame."""
        check_is_fitted(self, "map_")
        rc = self.config_.render_config()
        outs = []
        for x in X:
            if isinstance(x, FrameSet):
                x = x.camera
            if not isinstance(x, Camera):
                raise TypeError(f"expected Camera or FrameSet, got {type(x).__name__}")
            outs.append(render(self.map_, x, rc))
        return outs

    def score(self, X, y=None) -> float:
        """Mean RGB PSNR over the frames."""
        frames = self._frames(X)
        outs = self.predict(frames)
        return float(np.mean([psnr(o.rgb, f.rgb) for o, f in zip(outs, frames)]))
