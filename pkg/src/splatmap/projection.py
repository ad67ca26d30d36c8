"""World- and image-space influence of isotropic Gaussians and their projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianPrimitive

NEAR_CLIP = 0.01


@dataclass
class Projected2D:
    mu2d: np.ndarray
    r2d: float
    depth: float
    visible: bool


@dataclass
class ProjectedBatch:
    """Vectorized projection of a whole map into one camera."""

    mu2d: np.ndarray      # (N, 2) pixels
    r2d: np.ndarray       # (N,) pixels
    depth: np.ndarray     # (N,) camera-space z
    cam_points: np.ndarray  # (N, 3)
    support: np.ndarray   # (N,) pixel radius beyond which alpha < cutoff
    visible: np.ndarray   # (N,) bool


def g3d(primitive: GaussianPrimitive, x) -> float:
    d2 = float(np.sum((np.asarray(x, dtype=np.float64) - primitive.position) ** 2))
    return primitive.opacity * np.exp(-d2 / (2.0 * primitive.radius ** 2))


def g2d(proj: Projected2D, p, opacity: float) -> float:
    d2 = float(np.sum((np.asarray(p, dtype=np.float64) - proj.mu2d) ** 2))
    return opacity * np.exp(-d2 / (2.0 * proj.r2d ** 2))


def support_radius(r2d, opacity, alpha_cutoff):
    """Pixel distance at which ``opacity * exp(-q / 2 r2d^2)`` drops to ``alpha_cutoff``.

    A fixed 3-sigma disk is not enough: at 3 sigma the influence is
    ``0.0111 * opacity``, still above 1/255 once opacity exceeds ~0.35.
    """
    r2d = np.asarray(r2d, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    ratio = np.where(opacity > alpha_cutoff, opacity / alpha_cutoff, 1.0)
    s = r2d * np.sqrt(2.0 * np.log(ratio))
    # pad so float rounding at the exact cutoff never drops a contributing pixel
    return np.where(opacity >= alpha_cutoff, s * (1 + 1e-6) + 1e-6, 0.0)


def project_points(positions: np.ndarray, radii: np.ndarray, camera: Camera):
    pc = positions @ camera.rotation.T + camera.translation
    z = pc[:, 2]
    safe_z = np.where(np.abs(z) > 1e-12, z, 1e-12)
    u = camera.fx * pc[:, 0] / safe_z + camera.cx
    v = camera.fy * pc[:, 1] / safe_z + camera.cy
    r2d = camera.f_mean * radii / safe_z
    return np.stack([u, v], axis=1), r2d, z, pc


def project_batch(positions, radii, opacities, camera: Camera, alpha_cutoff=1.0 / 255.0,
                  near_clip=NEAR_CLIP) -> ProjectedBatch:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    mu2d, r2d, z, pc = project_points(positions, np.asarray(radii, dtype=np.float64), camera)
    front = z > near_clip
    s = np.where(front, support_radius(np.abs(r2d), opacities, alpha_cutoff), 0.0)
    # the disk must reach the rectangle spanned by pixel centers
    dx = np.maximum(0.0, np.maximum(-mu2d[:, 0], mu2d[:, 0] - (camera.width - 1)))
    dy = np.maximum(0.0, np.maximum(-mu2d[:, 1], mu2d[:, 1] - (camera.height - 1)))
    visible = front & (s > 0) & (dx * dx + dy * dy <= s * s)
    return ProjectedBatch(mu2d, r2d, z, pc, s, visible)


def project(primitive: GaussianPrimitive, camera: Camera, alpha_cutoff=1.0 / 255.0,
            near_clip=NEAR_CLIP) -> Projected2D:
    b = project_batch(primitive.position[None], [primitive.radius], [primitive.opacity], camera,
                      alpha_cutoff, near_clip)
    return Projected2D(b.mu2d[0], float(b.r2d[0]), float(b.depth[0]), bool(b.visible[0]))


def project_gradients_batch(cam_points, radii, camera: Camera, grad_mu2d, grad_r2d, grad_depth):
    """Chain rule through the projection: returns (dL/dposition (N,3), dL/dradius (N,))."""
    X, Y, Z = cam_points[:, 0], cam_points[:, 1], cam_points[:, 2]
    inv_z = 1.0 / Z
    gu, gv = grad_mu2d[:, 0], grad_mu2d[:, 1]
    fbar = camera.f_mean
    g_pc = np.empty_like(cam_points)
    g_pc[:, 0] = gu * camera.fx * inv_z
    g_pc[:, 1] = gv * camera.fy * inv_z
    g_pc[:, 2] = (
        -gu * camera.fx * X * inv_z ** 2
        - gv * camera.fy * Y * inv_z ** 2
        - grad_r2d * fbar * radii * inv_z ** 2
        + grad_depth
    )
    grad_pos = g_pc @ camera.rotation
    grad_radius = grad_r2d * fbar * inv_z
    return grad_pos, grad_radius


def project_gradients(primitive: GaussianPrimitive, camera: Camera, grad_mu2d, grad_r2d, grad_depth):
    pc = camera.rotation @ primitive.position + camera.translation
    gp, gr = project_gradients_batch(pc[None], np.array([primitive.radius]), camera,
                                     np.asarray(grad_mu2d, dtype=np.float64).reshape(1, 2),
                                     np.array([grad_r2d], dtype=np.float64),
                                     np.array([grad_depth], dtype=np.float64))
    return gp[0], float(gr[0])
