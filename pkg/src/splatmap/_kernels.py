"""Numba kernels for tile binning, front-to-back compositing and its adjoint.

Channel layout of per-primitive values and entry gradients:
    values: rgb (3), depth (1), semantic (3)  -> 7 channels
    entry gradient row: u, v, r2d, opacity, then 7 channel values -> 11
"""
import numpy as np
from numba import njit, prange

N_CH = 7
N_GRAD = 4 + N_CH


@njit(cache=True)
def bin_tiles(order, mu2d, support, width, height, tile):
    """Duplicate each primitive (in ``order``) into every tile its support box touches.

    Entries are grouped by tile; within a tile they keep ``order`` (depth, id).
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    ntiles = ntx * nty
    n = order.shape[0]
    rect = np.empty((n, 4), dtype=np.int64)
    counts = np.zeros(ntiles + 1, dtype=np.int64)
    for k in range(n):
        i = order[k]
        s = support[i]
        x0 = max(0, int(np.floor((mu2d[i, 0] - s) / tile)))
        x1 = min(ntx - 1, int(np.floor((mu2d[i, 0] + s) / tile)))
        y0 = max(0, int(np.floor((mu2d[i, 1] - s) / tile)))
        y1 = min(nty - 1, int(np.floor((mu2d[i, 1] + s) / tile)))
        rect[k, 0] = x0
        rect[k, 1] = x1
        rect[k, 2] = y0
        rect[k, 3] = y1
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * ntx + tx + 1] += 1
    for t in range(ntiles):
        counts[t + 1] += counts[t]
    fill = counts[:ntiles].copy()
    entries = np.empty(counts[ntiles], dtype=np.int64)
    for k in range(n):
        i = order[k]
        for ty in range(rect[k, 2], rect[k, 3] + 1):
            for tx in range(rect[k, 0], rect[k, 1] + 1):
                t = ty * ntx + tx
                entries[fill[t]] = i
                fill[t] += 1
    return entries, counts


@njit(parallel=True, cache=True)
def forward_tiles(entries, tile_start, mu2d, r2d, opacity, values, background,
                  width, height, tile, cutoff, clamp, t_floor):
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    image = np.empty((height, width, N_CH))
    trans = np.empty((height, width))
    last = np.empty((height, width), dtype=np.int64)
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        start = tile_start[t]
        end = tile_start[t + 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                acc = np.zeros(N_CH)
                stop = start
                for k in range(start, end):
                    i = entries[k]
                    dx = px - mu2d[i, 0]
                    dy = py - mu2d[i, 1]
                    a = opacity[i] * np.exp(-(dx * dx + dy * dy) / (2.0 * r2d[i] * r2d[i]))
                    if a < cutoff:
                        continue
                    if a > clamp:
                        a = clamp
                    w = a * T
                    for c in range(N_CH):
                        acc[c] += w * values[i, c]
                    T *= 1.0 - a
                    stop = k + 1
                    if T < t_floor:
                        break
                for c in range(N_CH):
                    image[py, px, c] = acc[c] + T * background[c]
                trans[py, px] = T
                last[py, px] = stop
    return image, trans, last


@njit(parallel=True, cache=True)
def backward_tiles(entries, tile_start, mu2d, r2d, opacity, values, background, trans, last,
                   grad_image, width, height, tile, cutoff, clamp):
    """Adjoint of ``forward_tiles``. Each tile writes only its own entry rows."""
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    egrad = np.zeros((entries.shape[0], N_GRAD))
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        start = tile_start[t]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = trans[py, px]
                behind = np.empty(N_CH)
                g = np.empty(N_CH)
                for c in range(N_CH):
                    behind[c] = background[c]
                    g[c] = grad_image[py, px, c]
                for k in range(last[py, px] - 1, start - 1, -1):
                    i = entries[k]
                    dx = px - mu2d[i, 0]
                    dy = py - mu2d[i, 1]
                    r2 = r2d[i] * r2d[i]
                    q = dx * dx + dy * dy
                    gauss = np.exp(-q / (2.0 * r2))
                    a_raw = opacity[i] * gauss
                    if a_raw < cutoff:
                        continue
                    a = a_raw if a_raw <= clamp else clamp
                    T_before = T / (1.0 - a)
                    w = a * T_before
                    da = 0.0
                    for c in range(N_CH):
                        egrad[k, 4 + c] += w * g[c]
                        da += g[c] * (values[i, c] - behind[c])
                        behind[c] = a * values[i, c] + (1.0 - a) * behind[c]
                    da *= T_before
                    T = T_before
                    if a_raw > clamp:
                        continue
                    egrad[k, 3] += da * gauss
                    dq = -da * a_raw / (2.0 * r2)
                    egrad[k, 0] += dq * (-2.0 * dx)
                    egrad[k, 1] += dq * (-2.0 * dy)
                    egrad[k, 2] += da * a_raw * q / (r2 * r2d[i])
    return egrad


@njit(cache=True)
def reduce_entries(entries, egrad, n_prims):
    """Ordered (serial) sum of entry gradients into primitives: bit-stable for any thread count."""
    out = np.zeros((n_prims, N_GRAD))
    for k in range(entries.shape[0]):
        i = entries[k]
        for c in range(N_GRAD):
            out[i, c] += egrad[k, c]
    return out


@njit(cache=True)
def naive_render(order, mu2d, r2d, opacity, values, background, width, height, cutoff, clamp):
    """Reference compositor: every pixel walks every primitive, no tiles, no early stop."""
    image = np.empty((height, width, N_CH))
    trans = np.empty((height, width))
    for py in range(height):
        for px in range(width):
            T = 1.0
            acc = np.zeros(N_CH)
            for k in range(order.shape[0]):
                i = order[k]
                d2 = (px - mu2d[i, 0]) ** 2 + (py - mu2d[i, 1]) ** 2
                alpha = opacity[i] * np.exp(-0.5 * d2 / r2d[i] ** 2)
                if alpha < cutoff:
                    continue
                alpha = min(alpha, clamp)
                for c in range(N_CH):
                    acc[c] += values[i, c] * alpha * T
                T = T * (1.0 - alpha)
            for c in range(N_CH):
                image[py, px, c] = acc[c] + T * background[c]
            trans[py, px] = T
    return image, trans
