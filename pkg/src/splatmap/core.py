"""Domain types shared by every stage of the pipeline.

The Gaussian map is stored as a structure of arrays: one row per isotropic
primitive. Opacity and radius hold their actual values here; any
unconstrained reparameterization is the optimizer's business.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "Camera",
    "FrameSet",
    "GaussianMap",
    "GaussianPrimitive",
    "MapValidationError",
    "n_sh_coeffs",
]

MAX_SH_DEGREE = 2


class MapValidationError(ValueError):
    """A primitive violates a map invariant; ``index`` names the record."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


def n_sh_coeffs(degree: int) -> int:
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    return (degree + 1) ** 2


@dataclass
class GaussianPrimitive:
    position: np.ndarray
    radius: float
    opacity: float
    rgb_feature: np.ndarray
    semantic_feature: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rgb_feature = np.asarray(self.rgb_feature, dtype=np.float64).ravel()
        self.semantic_feature = np.asarray(self.semantic_feature, dtype=np.float64).ravel()
        self.radius = float(self.radius)
        self.opacity = float(self.opacity)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid pose.

    Pixel centers sit at integer coordinates, so a 640-wide image with a
    centered principal point has ``cx == 319.5``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        self.validate()

    def validate(self, tol: float = 1e-6) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        R = self.rotation
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("pose must be finite")
        if np.abs(R @ R.T - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ValueError("pose rotation must be orthonormal with det +1")

    @classmethod
    def from_c2w(cls, c2w: np.ndarray, **intrinsics) -> "Camera":
        c2w = np.asarray(c2w, dtype=np.float64)
        R = c2w[:3, :3].T
        t = -R @ c2w[:3, 3]
        return cls(rotation=R, translation=t, **intrinsics)

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def w2c(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def c2w(self) -> np.ndarray:
        return np.linalg.inv(self.w2c)

    def intrinsics(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)

    def scaled(self, level: int) -> "Camera":
        """Camera for pyramid ``level``: dims halve (ceiling), half-pixel centered intrinsics."""
        if level < 0:
            raise ValueError("level must be non-negative")
        s = 2.0 ** (-level)
        w, h = self.width, self.height
        for _ in range(level):
            w, h = -(-w // 2), -(-h // 2)
        return Camera(
            fx=self.fx * s,
            fy=self.fy * s,
            cx=(self.cx + 0.5) * s - 0.5,
            cy=(self.cy + 0.5) * s - 0.5,
            width=w,
            height=h,
            rotation=self.rotation.copy(),
            translation=self.translation.copy(),
        )


class GaussianMap:
    """Growable collection of isotropic Gaussian primitives.

    Attributes are parallel arrays indexed by primitive. ``compaction_log``
    records, for every prune/clone epoch, the old index of each surviving
    row so callers can relate indices across epochs.
    """

    def __init__(
        self,
        positions=None,
        radii=None,
        opacities=None,
        rgb_features=None,
        sem_features=None,
        sh_degree_rgb: int = 0,
        sh_degree_sem: int = 0,
        keyframe_ids=None,
        iterations_added=None,
    ):
        self.sh_degree_rgb = int(sh_degree_rgb)
        self.sh_degree_sem = int(sh_degree_sem)
        k_rgb = 3 * n_sh_coeffs(self.sh_degree_rgb)
        k_sem = 3 * n_sh_coeffs(self.sh_degree_sem)
        n = 0 if positions is None else len(positions)
        self.positions = _as2d(positions, n, 3)
        self.radii = _as1d(radii, n, np.float64)
        self.opacities = _as1d(opacities, n, np.float64)
        self.rgb_features = _as2d(rgb_features, n, k_rgb)
        self.sem_features = _as2d(sem_features, n, k_sem)
        self.keyframe_ids = _as1d(keyframe_ids, n, np.int64, fill=-1)
        self.iterations_added = _as1d(iterations_added, n, np.int64, fill=0)
        self.compaction_log: list[np.ndarray] = []
        for name in ("radii", "opacities", "rgb_features", "sem_features", "keyframe_ids", "iterations_added"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")

    @property
    def n_rgb_features(self) -> int:
        return 3 * n_sh_coeffs(self.sh_degree_rgb)

    @property
    def n_sem_features(self) -> int:
        return 3 * n_sh_coeffs(self.sh_degree_sem)

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianMap):
            return NotImplemented
        return (
            self.sh_degree_rgb == other.sh_degree_rgb
            and self.sh_degree_sem == other.sh_degree_sem
            and all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays()))
        )

    def __repr__(self) -> str:
        return f"GaussianMap(n={len(self)}, sh_degree_rgb={self.sh_degree_rgb}, sh_degree_sem={self.sh_degree_sem})"

    def _arrays(self):
        return (
            self.positions,
            self.radii,
            self.opacities,
            self.rgb_features,
            self.sem_features,
            self.keyframe_ids,
            self.iterations_added,
        )

    @classmethod
    def from_primitives(cls, primitives: Iterable[GaussianPrimitive], sh_degree_rgb=0, sh_degree_sem=0) -> "GaussianMap":
        prims = list(primitives)
        m = cls(sh_degree_rgb=sh_degree_rgb, sh_degree_sem=sh_degree_sem)
        if prims:
            m.append(
                np.stack([p.position for p in prims]),
                np.array([p.radius for p in prims]),
                np.array([p.opacity for p in prims]),
                np.stack([p.rgb_feature for p in prims]),
                np.stack([p.semantic_feature for p in prims]),
            )
        return m

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.positions[i].copy(),
            self.radii[i],
            self.opacities[i],
            self.rgb_features[i].copy(),
            self.sem_features[i].copy(),
        )

    def __iter__(self):
        return (self.primitive(i) for i in range(len(self)))

    def copy(self) -> "GaussianMap":
        m = GaussianMap(*[a.copy() for a in self._arrays()[:5]], self.sh_degree_rgb, self.sh_degree_sem,
                        self.keyframe_ids.copy(), self.iterations_added.copy())
        m.compaction_log = [a.copy() for a in self.compaction_log]
        return m

    def append(self, positions, radii, opacities, rgb_features, sem_features, keyframe_id=-1, iteration=0) -> None:
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        self.positions = np.concatenate([self.positions, positions])
        self.radii = np.concatenate([self.radii, np.asarray(radii, dtype=np.float64).reshape(n)])
        self.opacities = np.concatenate([self.opacities, np.asarray(opacities, dtype=np.float64).reshape(n)])
        self.rgb_features = np.concatenate(
            [self.rgb_features, np.asarray(rgb_features, dtype=np.float64).reshape(n, self.n_rgb_features)])
        self.sem_features = np.concatenate(
            [self.sem_features, np.asarray(sem_features, dtype=np.float64).reshape(n, self.n_sem_features)])
        self.keyframe_ids = np.concatenate([self.keyframe_ids, np.broadcast_to(np.int64(keyframe_id), n)])
        self.iterations_added = np.concatenate([self.iterations_added, np.broadcast_to(np.int64(iteration), n)])

    def compact(self, rows: np.ndarray) -> np.ndarray:
        """Keep (and possibly repeat) ``rows`` in order; logs and returns the old-index map."""
        rows = np.asarray(rows, dtype=np.int64)
        self.positions = self.positions[rows]
        self.radii = self.radii[rows]
        self.opacities = self.opacities[rows]
        self.rgb_features = self.rgb_features[rows]
        self.sem_features = self.sem_features[rows]
        self.keyframe_ids = self.keyframe_ids[rows]
        self.iterations_added = self.iterations_added[rows]
        self.compaction_log.append(rows.copy())
        return rows

    def validate(self) -> None:
        """O(N) invariant pass; raises MapValidationError naming the first bad record."""
        n = len(self)
        checks = [
            (~np.all(np.isfinite(self.positions), axis=1), "non-finite position"),
            (~np.isfinite(self.radii), "non-finite radius"),
            (~np.isfinite(self.opacities), "non-finite opacity"),
            (~np.all(np.isfinite(self.rgb_features), axis=1), "non-finite rgb feature"),
            (~np.all(np.isfinite(self.sem_features), axis=1), "non-finite semantic feature"),
            (self.radii <= 0, "radius must be positive"),
            ((self.opacities < 0) | (self.opacities > 1), "opacity outside [0, 1]"),
        ]
        first = None
        for bad, msg in checks:
            idx = np.flatnonzero(bad[:n])
            if len(idx) and (first is None or idx[0] < first[0]):
                first = (int(idx[0]), msg)
        if first is not None:
            raise MapValidationError(first[1], first[0])


@dataclass
class FrameSet:
    """Aligned RGB, depth and semantic observations of one keyframe.

    Depth is in meters; ``depth_valid`` marks usable pixels. ``labels`` holds
    palette label ids (-1 where unknown) matching ``semantic`` colors.
    """

    rgb: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    camera: Camera
    frame_id: int = 0
    depth_valid: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.semantic = np.asarray(self.semantic, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth_valid is None:
            self.depth_valid = np.isfinite(depth) & (depth > 0)
        self.depth_valid = np.asarray(self.depth_valid, dtype=bool)
        self.depth = np.where(self.depth_valid, np.nan_to_num(depth), 0.0)
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3) or self.semantic.shape != (h, w, 3):
            raise ValueError("rgb, depth and semantic images must share H x W")
        if (self.camera.height, self.camera.width) != (h, w):
            raise ValueError(f"camera is {self.camera.width}x{self.camera.height}, images are {w}x{h}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (h, w):
                raise ValueError("label image must be H x W")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def _as2d(a, n, k):
    if a is None:
        return np.zeros((n, k), dtype=np.float64)
    a = np.array(a, dtype=np.float64)
    return a.reshape(n, k)


def _as1d(a, n, dtype, fill=0):
    if a is None:
        return np.full(n, fill, dtype=dtype)
    return np.array(a, dtype=dtype).reshape(-1)
