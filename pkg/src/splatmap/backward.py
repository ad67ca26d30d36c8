"""Reverse-mode gradients of a pixel-space loss down to primitive parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Camera, GaussianMap
from .projection import project_gradients_batch
from .renderer import RenderConfig, RenderOutput, render
from .sh import rgb_to_dc, sh_backward

__all__ = ["ParamGradients", "backward", "GradCheckReport", "check_gradients", "random_scene", "PARAM_CLASSES"]

PARAM_CLASSES = ("position", "radius", "opacity", "rgb_feature", "semantic_feature")


@dataclass
class ParamGradients:
    position: np.ndarray
    radius: np.ndarray
    opacity: np.ndarray
    rgb_feature: np.ndarray
    semantic_feature: np.ndarray

    def __len__(self):
        return len(self.radius)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_CLASSES}

    def __iadd__(self, other: "ParamGradients"):
        for name in PARAM_CLASSES:
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    @classmethod
    def zeros_like(cls, gmap: GaussianMap) -> "ParamGradients":
        n = len(gmap)
        return cls(np.zeros((n, 3)), np.zeros(n), np.zeros(n),
                   np.zeros((n, gmap.n_rgb_features)), np.zeros((n, gmap.n_sem_features)))


def backward(output: RenderOutput, gmap: GaussianMap, camera: Camera | None = None,
             config: RenderConfig | None = None, grad_rgb=None, grad_depth=None,
             grad_semantic=None) -> ParamGradients:
    """Gradients of L given dL/dR, dL/dD, dL/dS images (``None`` means zero)."""
    camera = camera or output.camera
    config = config or output.config
    h, w = output.shape
    if (camera.height, camera.width) != (h, w):
        raise ValueError(f"camera is {camera.width}x{camera.height} but output is {w}x{h}")
    if output.n_primitives != len(gmap):
        raise ValueError(f"output rendered {output.n_primitives} primitives, map has {len(gmap)}")

    grad_image = np.zeros((h, w, _kernels.N_CH))
    for sl, g, shape in ((slice(0, 3), grad_rgb, (h, w, 3)), (slice(3, 4), grad_depth, (h, w)),
                         (slice(4, 7), grad_semantic, (h, w, 3))):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != shape:
            raise ValueError(f"pixel gradient of shape {g.shape} does not match output {shape}")
        grad_image[:, :, sl] = g.reshape(h, w, -1)

    p = output._prims
    n = len(gmap)
    grads = ParamGradients.zeros_like(gmap)
    if n == 0 or len(output._entries) == 0:
        return grads

    egrad = _kernels.backward_tiles(
        output._entries, output._tile_start, p.proj.mu2d, p.proj.r2d, p.opacity, p.values, config.background,
        output.transmittance, output._last, grad_image, w, h, output._tile,
        config.alpha_cutoff, config.alpha_clamp)
    per = _kernels.reduce_entries(output._entries, egrad, n)

    grads.opacity[:] = per[:, 3]
    g_rgb = per[:, 4:7] * ((p.rgb_raw > 0.0) & (p.rgb_raw < 1.0))
    g_sem = per[:, 8:11] * ((p.sem_raw > 0.0) & (p.sem_raw < 1.0))
    grads.rgb_feature[:], gpos_rgb = sh_backward(gmap.sh_degree_rgb, gmap.rgb_features, p.offsets, p.dirs, g_rgb)
    grads.semantic_feature[:], gpos_sem = sh_backward(gmap.sh_degree_sem, gmap.sem_features, p.offsets, p.dirs,
                                                      g_sem)

    touched = np.unique(output._entries)
    gpos, grad_r = project_gradients_batch(p.proj.cam_points[touched], gmap.radii[touched], camera,
                                           per[touched, 0:2], per[touched, 2], per[touched, 7])
    grads.position[touched] = gpos
    grads.radius[touched] = grad_r
    grads.position += gpos_rgb + gpos_sem
    return grads


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    seed: int
    size: int
    n_primitives: int
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)
    n_checked: dict = field(default_factory=dict)
    n_excluded: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    def format(self) -> str:
        lines = [f"gradcheck seed={self.seed} size={self.size} primitives={self.n_primitives} tol={self.tolerance:g}"]
        for name in PARAM_CLASSES:
            if name not in self.max_rel_error:
                continue
            err = self.max_rel_error[name]
            status = "PASS" if err < self.tolerance else "FAIL"
            lines.append(f"  {name:<17} max_rel_error={err:.3e} checked={self.n_checked[name]:<4d} "
                         f"excluded={self.n_excluded[name]:<3d} {status}")
        for name, prim, comp in self.excluded:
            lines.append(f"  excluded boundary case: {name}[{prim}][{comp}]")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _rot(rng, max_angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    a = rng.uniform(-max_angle, max_angle)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K


def random_scene(seed: int, size: int = 32, n_primitives: int = 20, sh_degree: int = 0):
    """Random primitives in front of a randomly posed camera, all colors off the clamp boundaries."""
    rng = np.random.default_rng(seed)
    cam_kw = dict(fx=float(size), fy=float(size) * 1.05, cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size)
    R = _rot(rng, 0.5)
    t = rng.normal(scale=0.3, size=3)
    camera = Camera(rotation=R, translation=t, **cam_kw)
    z = rng.uniform(1.5, 3.0, n_primitives)
    u = rng.uniform(2, size - 3, n_primitives)
    v = rng.uniform(2, size - 3, n_primitives)
    pc = np.stack([(u - cam_kw["cx"]) * z / cam_kw["fx"], (v - cam_kw["cy"]) * z / cam_kw["fy"], z], axis=1)
    positions = (pc - t) @ R  # R^T (pc - t)
    r2d = rng.uniform(1.5, 5.0, n_primitives)
    radii = r2d * z / camera.f_mean
    opacities = rng.uniform(0.1, 0.9, n_primitives)
    k = (sh_degree + 1) ** 2
    rgb = np.zeros((n_primitives, k, 3))
    sem = np.zeros((n_primitives, k, 3))
    rgb[:, 0] = rgb_to_dc(rng.uniform(0.15, 0.85, (n_primitives, 3)))
    sem[:, 0] = rgb_to_dc(rng.uniform(0.15, 0.85, (n_primitives, 3)))
    if k > 1:
        rgb[:, 1:] = rng.normal(scale=0.05, size=(n_primitives, k - 1, 3))
        sem[:, 1:] = rng.normal(scale=0.05, size=(n_primitives, k - 1, 3))
    gmap = GaussianMap(positions, radii, opacities, rgb.reshape(n_primitives, -1), sem.reshape(n_primitives, -1),
                       sh_degree_rgb=sh_degree, sh_degree_sem=sh_degree)
    pix = dict(grad_rgb=rng.normal(size=(size, size, 3)), grad_depth=rng.normal(size=(size, size)),
               grad_semantic=rng.normal(size=(size, size, 3)))
    return gmap, camera, pix


def _regime(gmap: GaussianMap, out: RenderOutput, config: RenderConfig):
    """Discrete forward decisions; finite differences are only valid if these stay fixed."""
    p = out._prims
    h, w = out.shape
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (xs[..., None] - p.proj.mu2d[:, 0]) ** 2 + (ys[..., None] - p.proj.mu2d[:, 1]) ** 2
    alpha = p.opacity * np.exp(-d2 / (2 * p.proj.r2d ** 2))
    front = p.proj.depth > config.near_clip
    order = np.lexsort((np.arange(len(gmap)), p.proj.depth))
    processed = out._last - out._tile_start[(ys // out._tile) * (-(-w // out._tile)) + xs // out._tile]
    return (
        (alpha >= config.alpha_cutoff) & front,
        (alpha > config.alpha_clamp) & front,
        (p.rgb_raw > 0) & (p.rgb_raw < 1),
        (p.sem_raw > 0) & (p.sem_raw < 1),
        order,
        processed,
    )


def _same_regime(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _param_views(gmap: GaussianMap):
    return {
        "position": gmap.positions,
        "radius": gmap.radii[:, None],
        "opacity": gmap.opacities[:, None],
        "rgb_feature": gmap.rgb_features,
        "semantic_feature": gmap.sem_features,
    }


def _setter(gmap: GaussianMap, name: str, i: int, j: int, value: float):
    if name == "position":
        gmap.positions[i, j] = value
    elif name == "radius":
        gmap.radii[i] = value
    elif name == "opacity":
        gmap.opacities[i] = value
    elif name == "rgb_feature":
        gmap.rgb_features[i, j] = value
    else:
        gmap.sem_features[i, j] = value


def finite_difference_check(gmap: GaussianMap, camera: Camera, pixel_grads: dict, config: RenderConfig,
                            step: float = 1e-4, denom_floor: float = 1e-3):
    """Compare analytic gradients with central differences of sum(pixel_grad * output).

    Relative error is ``|a - n| / max(|a|, |n|, denom_floor)``, so absolute
    differences below ``tol * denom_floor`` always pass. Returns per-class
    lists of (prim, component, analytic, numeric, rel_error, excluded).
    """
    def loss(out):
        return (np.sum(pixel_grads["grad_rgb"] * out.rgb) + np.sum(pixel_grads["grad_depth"] * out.depth)
                + np.sum(pixel_grads["grad_semantic"] * out.semantic))

    out = render(gmap, camera, config)
    analytic = backward(out, gmap, camera, config, **pixel_grads).as_dict()
    work = gmap.copy()
    results = {name: [] for name in PARAM_CLASSES}
    for name, view in _param_views(gmap).items():
        a_all = analytic[name].reshape(len(gmap), view.shape[1])
        for i in range(len(gmap)):
            for j in range(view.shape[1]):
                x0 = view[i, j]
                # shrink the step when the first one straddles a cutoff/clamp/order change
                for h in (step, step / 10, step / 100):
                    _setter(work, name, i, j, x0 + h)
                    op = render(work, camera, config)
                    _setter(work, name, i, j, x0 - h)
                    om = render(work, camera, config)
                    _setter(work, name, i, j, x0)
                    numeric = (loss(op) - loss(om)) / (2 * h)
                    excluded = not _same_regime(_regime(work, op, config), _regime(work, om, config))
                    if not excluded:
                        break
                a = a_all[i, j]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
                results[name].append((i, j, a, numeric, rel, excluded))
    return results


def check_gradients(seed: int = 42, size: int = 32, n_primitives: int = 20, tolerance: float = 1e-3,
                    config: RenderConfig | None = None, scene=None, step: float = 1e-4) -> GradCheckReport:
    """Reproducible finite-difference audit of ``backward`` on a random scene.

    ``scene`` may supply ``(gmap, camera, pixel_grads)`` instead of the seeded one.
    """
    config = config or RenderConfig()
    gmap, camera, pix = scene if scene is not None else random_scene(seed, size, n_primitives)
    report = GradCheckReport(seed=seed, size=size, n_primitives=len(gmap), tolerance=tolerance)
    results = finite_difference_check(gmap, camera, pix, config, step=step)
    for name in PARAM_CLASSES:
        rows = results[name]
        kept = [r for r in rows if not r[5]]
        report.max_rel_error[name] = max((r[4] for r in kept), default=0.0)
        report.n_checked[name] = len(kept)
        report.n_excluded[name] = len(rows) - len(kept)
        report.excluded += [(name, r[0], r[1]) for r in rows if r[5]]
    return report
