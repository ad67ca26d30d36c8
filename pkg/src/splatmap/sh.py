"""Real spherical harmonics up to degree 2 for per-primitive color features.

Features are laid out coefficient-major: ``feature[k * 3 + c]`` is basis
function ``k`` for channel ``c``. Colors are offset by 0.5 so a zero
feature vector renders mid-gray.
"""
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152373871)


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Basis values, shape (N, (degree+1)**2), for unit view directions (N, 3)."""
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full(n, SH_C0)]
    if degree >= 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        cols += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * z * z - x * x - y * y),
            SH_C2[3] * x * z,
            SH_C2[4] * (x * x - y * y),
        ]
    return np.stack(cols, axis=1)


def sh_basis_jacobian(degree: int, dirs: np.ndarray) -> np.ndarray:
    """d basis / d dir, shape (N, (degree+1)**2, 3)."""
    n = len(dirs)
    k = (degree + 1) ** 2
    J = np.zeros((n, k, 3))
    if degree >= 1:
        J[:, 1, 1] = -SH_C1
        J[:, 2, 2] = SH_C1
        J[:, 3, 0] = -SH_C1
    if degree >= 2:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        J[:, 4, 0], J[:, 4, 1] = SH_C2[0] * y, SH_C2[0] * x
        J[:, 5, 1], J[:, 5, 2] = SH_C2[1] * z, SH_C2[1] * y
        J[:, 6, 0], J[:, 6, 1], J[:, 6, 2] = -2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z
        J[:, 7, 0], J[:, 7, 2] = SH_C2[3] * z, SH_C2[3] * x
        J[:, 8, 0], J[:, 8, 1] = 2 * SH_C2[4] * x, -2 * SH_C2[4] * y
    return J


def view_dirs(positions: np.ndarray, cam_center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions from the camera center to each primitive, plus the raw offsets."""
    v = positions - cam_center
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.maximum(norm, 1e-12), v


def eval_sh(degree: int, features: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Unclamped colors (N, 3) from features (N, 3*(degree+1)**2)."""
    basis = sh_basis(degree, dirs)
    coeffs = features.reshape(len(features), (degree + 1) ** 2, 3)
    return np.einsum("nk,nkc->nc", basis, coeffs) + 0.5


def sh_backward(degree: int, features: np.ndarray, offsets: np.ndarray, dirs: np.ndarray,
                grad_color: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar w.r.t. features and primitive positions given dL/dcolor."""
    basis = sh_basis(degree, dirs)
    grad_feat = (basis[:, :, None] * grad_color[:, None, :]).reshape(len(features), 3 * (degree + 1) ** 2)
    if degree == 0:
        return grad_feat, np.zeros_like(offsets)
    coeffs = features.reshape(len(features), (degree + 1) ** 2, 3)
    J = sh_basis_jacobian(degree, dirs)
    grad_dir = np.einsum("nc,nkc,nkj->nj", grad_color, coeffs, J)
    norm = np.maximum(np.linalg.norm(offsets, axis=1, keepdims=True), 1e-12)
    # d(v/|v|)/dv = (I - d d^T) / |v|
    grad_pos = (grad_dir - dirs * np.sum(grad_dir * dirs, axis=1, keepdims=True)) / norm
    return grad_feat, grad_pos


def rgb_to_dc(color: np.ndarray) -> np.ndarray:
    return (np.asarray(color, dtype=np.float64) - 0.5) / SH_C0


def dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5
