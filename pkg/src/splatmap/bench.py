"""Renderer throughput benchmark: tiled (multi-threaded) against the naive oracle (single thread)."""
from __future__ import annotations

import os
import time

import numba
import numpy as np

from .core import Camera, GaussianMap
from .renderer import RenderConfig, render, render_naive
from .sh import rgb_to_dc

__all__ = ["bench_scene", "run_bench"]


def bench_scene(n_primitives: int = 20000, width: int = 640, height: int = 480, seed: int = 0):
    """Random primitives filling the frustum 1-6 m in front of an identity camera."""
    rng = np.random.default_rng(seed)
    f = 0.9 * width
    cam = Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height)
    z = rng.uniform(1.0, 6.0, n_primitives)
    x = rng.uniform(-0.5, 0.5, n_primitives) * width / f * z
    y = rng.uniform(-0.5, 0.5, n_primitives) * height / f * z
    # screen radii of roughly 1.5-12 px
    radii = rng.uniform(1.5, 12.0, n_primitives) * z / f
    gmap = GaussianMap(np.stack([x, y, z], axis=1), radii, rng.uniform(0.2, 0.9, n_primitives),
                       rgb_to_dc(rng.uniform(0.1, 0.9, (n_primitives, 3))),
                       rgb_to_dc(rng.uniform(0.1, 0.9, (n_primitives, 3))))
    return gmap, cam


def _best_time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(n_primitives: int = 20000, width: int = 640, height: int = 480, threads: int = 8,
              repeats: int = 3, naive_repeats: int = 1, seed: int = 0) -> dict:
    """Best-of-``repeats`` wall time for each renderer, after a warm-up (JIT) call.

    ``threads`` is capped at the number of threads numba can launch (set
    ``NUMBA_NUM_THREADS`` before import to raise it); the count actually used
    is reported as ``tiled_threads``, alongside the machine's CPU count.
    """
    gmap, cam = bench_scene(n_primitives, width, height, seed)
    config = RenderConfig()
    small_map, small_cam = bench_scene(50, 32, 24, seed)
    render(small_map, small_cam, config)
    render_naive(small_map, small_cam, config)

    previous = numba.get_num_threads()
    used = max(1, min(threads, numba.config.NUMBA_NUM_THREADS))
    try:
        numba.set_num_threads(used)
        t_tiled = _best_time(lambda: render(gmap, cam, config), repeats)
        numba.set_num_threads(1)
        t_naive = _best_time(lambda: render_naive(gmap, cam, config), naive_repeats)
    finally:
        numba.set_num_threads(previous)
    return {
        "n_primitives": n_primitives, "width": width, "height": height,
        "tiled_threads": used, "requested_threads": threads, "cpu_count": os.cpu_count(),
        "tiled_seconds": t_tiled, "naive_seconds": t_naive, "speedup": t_naive / t_tiled,
    }


def main(argv=None) -> int:
    import argparse
    import json

    ap = argparse.ArgumentParser(prog="python -m splatmap.bench", description=__doc__)
    ap.add_argument("--primitives", type=int, default=20000)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--height", type=int, default=480)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    print(json.dumps(run_bench(args.primitives, args.width, args.height, args.threads, args.repeats,
                               seed=args.seed), indent=2))
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
