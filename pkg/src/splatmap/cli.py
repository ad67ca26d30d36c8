"""``splatmap`` command line: synth, fit, render, eval, gradcheck.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("splatmap")

CHANNELS = ("rgb", "depth", "semantic")


class UsageError(Exception):
    pass


def _set_threads(n):
    if n is None:
        return
    import numba

    if n < 1:
        raise UsageError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _probability(text):
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {p}")
    return p


def cmd_synth(args) -> int:
    from .datasets import SyntheticSceneSpec, generate_synthetic, make_a1_spec

    if args.preset:
        spec = make_a1_spec(seed=args.seed or 0)
    else:
        if not Path(args.spec).is_file():
            raise UsageError(f"scene spec not found: {args.spec}")
        spec = SyntheticSceneSpec.load(args.spec)
    if args.depth_dropout is not None:
        spec.depth_dropout = args.depth_dropout
    if args.label_flip is not None:
        spec.label_flip = args.label_flip
    if args.seed is not None:
        spec.noise_seed = args.seed
    manifest = generate_synthetic(spec, args.out)
    print(manifest.path)
    return 0


def cmd_fit(args) -> int:
    from .datasets import load_dataset
    from .ply import load_map
    from .trainer import TrainConfig, fit

    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = TrainConfig.from_dict(overrides)
    frames = list(load_dataset(args.data, snap_semantic=args.snap_semantic))
    init = load_map(args.init) if args.init else None
    gmap, log = fit(frames, config, initial_map=init, log_path=args.log, map_path=args.out)
    print(f"wrote {args.out}: {len(gmap)} primitives after {config.iterations} iterations")
    return 0


def _pose_camera(args):
    """Camera from ``--pose`` (frame index into ``--data``, or a pose file) plus intrinsics."""
    from .core import Camera
    from .datasets import load_manifest, parse_poses

    manifest = load_manifest(args.data) if args.data else None
    if args.intrinsics:
        intr = json.loads(Path(args.intrinsics).read_text())
        intr = {k: intr[k] for k in ("fx", "fy", "cx", "cy", "width", "height")}
    elif manifest is not None:
        intr = manifest.intrinsics
    else:
        raise UsageError("render needs --data or --intrinsics for the camera intrinsics")
    if args.pose.lstrip("-").isdigit():
        if manifest is None:
            raise UsageError("--pose INDEX needs --data")
        idx = int(args.pose)
        poses = dict(parse_poses(manifest.root / manifest.pose_file))
        if not 0 <= idx < len(manifest.frames):
            raise UsageError(f"--pose index {idx} out of range (dataset has {len(manifest.frames)} frames)")
        T = poses[int(manifest.frames[idx]["frame_id"])]
    else:
        path = Path(args.pose)
        if not path.is_file():
            raise UsageError(f"pose file not found: {path}")
        T = parse_poses(path)[0][1]
    return Camera(rotation=T[:3, :3], translation=T[:3, 3], **intr)


def cmd_render(args) -> int:
    from .ply import load_map
    from .renderer import RenderConfig, render_at_level, save_render_pngs

    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    bad = [c for c in channels if c not in CHANNELS]
    if bad or not channels:
        raise UsageError(f"unknown channel(s) {bad}; choose from {','.join(CHANNELS)}")
    if args.level < 0:
        raise UsageError("--level must be non-negative")
    camera = _pose_camera(args)
    gmap = load_map(args.map)
    out = render_at_level(gmap, camera, args.level, RenderConfig(), n_levels=args.level + 1)
    for p in save_render_pngs(out, args.out, channels, depth_scale=args.depth_scale):
        print(p)
    return 0


def _grid(gmap, frames, path):
    from PIL import Image

    from .imageio import to_uint8
    from .renderer import render

    rows = []
    for f in frames:
        out = render(gmap, f.camera)
        dmax = max(float(f.depth.max()), 1e-6)
        depth = lambda d: np.repeat(np.clip(d / dmax, 0, 1)[..., None], 3, axis=2)
        rows.append(np.concatenate([out.rgb, f.rgb, out.semantic, f.semantic, depth(out.depth), depth(f.depth)],
                                   axis=1))
    Image.fromarray(to_uint8(np.concatenate(rows, axis=0))).save(path)


def cmd_eval(args) -> int:
    from .datasets import load_dataset, load_manifest
    from .metrics import evaluate
    from .ply import load_map

    gmap = load_map(args.map)
    manifest = load_manifest(args.data)
    frames = list(load_dataset(manifest, snap_semantic=args.snap_semantic))
    report = evaluate(gmap, frames, manifest.palette or None)
    Path(args.out).write_text(json.dumps(report, indent=2))
    if args.grid:
        _grid(gmap, frames, args.grid)
    print(json.dumps(report["mean"]))
    return 0


def cmd_gradcheck(args) -> int:
    from .backward import check_gradients

    if args.size < 1 or args.primitives < 1 or args.tol < 0:
        raise UsageError("--size and --primitives must be positive, --tol non-negative")
    report = check_gradients(seed=args.seed, size=args.size, n_primitives=args.primitives, tolerance=args.tol)
    print(report.format())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap on renderer worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="splatmap", description="Gaussian-splat RGB-D-semantic mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="scene spec JSON")
    src.add_argument("--preset", choices=["a1"], help="built-in scene")
    p.add_argument("--out", required=True)
    p.add_argument("--depth-dropout", type=_probability, default=None)
    p.add_argument("--label-flip", type=_probability, default=None)
    p.add_argument("--seed", type=int, default=None, help="noise seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit a map to a dataset")
    p.add_argument("--data", required=True, help="dataset manifest JSON")
    p.add_argument("--config", help="training config JSON (flags override it)")
    p.add_argument("--out", required=True, help="output map (.ply)")
    p.add_argument("--log", help="JSONL training log")
    p.add_argument("--init", help="initial map (.ply)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--snap-semantic", action="store_true", help="snap off-palette semantic pixels")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", parents=[common], help="render a map from one pose")
    p.add_argument("--map", required=True)
    p.add_argument("--pose", required=True, help="frame index into --data, or a pose file")
    p.add_argument("--data", help="dataset manifest (intrinsics and poses)")
    p.add_argument("--intrinsics", help="JSON with fx, fy, cx, cy, width, height")
    p.add_argument("--channels", default="rgb,depth,semantic")
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--depth-scale", type=float, default=5000.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="score a map against a dataset")
    p.add_argument("--map", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--grid", help="rendered-vs-ground-truth mosaic PNG")
    p.add_argument("--snap-semantic", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit of the backward pass")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--primitives", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"splatmap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, IndexError, RuntimeError) as exc:
        print(f"splatmap {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
