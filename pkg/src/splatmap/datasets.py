"""RGB-D-semantic dataset manifests, pose files, and synthetic ground-truth scenes.

Manifest (JSON)::

    {
      "intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..},
      "depth_scale": 5000.0,
      "pose_file": "poses.txt",
      "keyframe_stride": 1,
      "palette": [{"id": 0, "name": "wall", "color": [r, g, b]}, ...],   # 8-bit colors
      "frames": [{"frame_id": 0, "rgb": "rgb/000000.png", "depth": "depth/000000.png",
                  "semantic": "semantic/000000.png"}, ...]
    }

Paths are relative to the manifest's directory. The pose file holds one line
per frame: ``frame_id`` followed by the 16 row-major entries of the
camera-to-world matrix.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import Camera, FrameSet, GaussianMap
from .imageio import depth_to_raw, read_depth_png, read_rgb_png, to_uint8, write_depth_png, write_rgb_png
from .metrics import snap_to_palette
from .renderer import RenderConfig, render_naive
from .sh import rgb_to_dc

logger = logging.getLogger(__name__)

__all__ = ["DatasetError", "DatasetManifest", "SyntheticSceneSpec", "load_manifest", "load_dataset",
           "parse_poses", "format_poses", "synthesize", "generate_synthetic", "make_a1_spec", "look_at"]


class DatasetError(ValueError):
    pass


@dataclass
class DatasetManifest:
    root: Path
    intrinsics: dict
    frames: list
    pose_file: str
    palette: list                 # [(label_id, name, (r, g, b) in [0, 1])]
    depth_scale: float = 5000.0
    keyframe_stride: int = 1
    path: Path | None = None

    def palette_colors_u8(self) -> np.ndarray:
        return np.array([np.round(np.asarray(c) * 255) for _, _, c in self.palette], dtype=np.int64).reshape(-1, 3)

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics,
            "depth_scale": self.depth_scale,
            "pose_file": self.pose_file,
            "keyframe_stride": self.keyframe_stride,
            "palette": [{"id": int(i), "name": n, "color": [int(round(x * 255)) for x in c]}
                        for i, n, c in self.palette],
            "frames": self.frames,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        self.path = path
        return path


def _palette_from_json(entries) -> list:
    palette = [(int(e["id"]), str(e.get("name", e["id"])), tuple(np.asarray(e["color"], dtype=np.float64) / 255.0))
               for e in entries]
    colors = [c for _, _, c in palette]
    if len(set(colors)) != len(colors):
        raise DatasetError("palette colors must be unique")
    return palette


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        m = DatasetManifest(
            root=path.parent,
            intrinsics={k: d["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height")},
            frames=list(d["frames"]),
            pose_file=d["pose_file"],
            palette=_palette_from_json(d.get("palette", [])),
            depth_scale=float(d.get("depth_scale", 5000.0)),
            keyframe_stride=int(d.get("keyframe_stride", 1)),
            path=path,
        )
    except KeyError as exc:
        raise DatasetError(f"manifest {path} is missing key {exc}") from exc
    for f in m.frames:
        for key in ("rgb", "depth", "semantic"):
            if not (m.root / f[key]).exists():
                raise DatasetError(f"frame {f.get('frame_id')}: missing {key} file {m.root / f[key]}")
    if not (m.root / m.pose_file).exists():
        raise DatasetError(f"missing pose file {m.root / m.pose_file}")
    return m


def nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def parse_poses(path, tol: float = 1e-3) -> list[tuple[int, np.ndarray]]:
    """Read camera-to-world lines and return ``(frame_id, T_cw)`` pairs (4x4 world-to-camera)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 17:
            raise DatasetError(f"{path}:{lineno}: expected frame id + 16 values, got {len(tok)} tokens")
        try:
            fid = int(tok[0])
            M = np.array([float(t) for t in tok[1:]]).reshape(4, 4)
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        R = M[:3, :3]
        drift = max(np.abs(R.T @ R - np.eye(3)).max(), np.abs(M[3] - [0, 0, 0, 1]).max())
        if not np.all(np.isfinite(M)) or drift > tol or np.linalg.det(R) <= 0:
            raise DatasetError(f"{path}:{lineno}: pose is not a rigid transform (drift {drift:.2e})")
        if drift > 0:
            R = nearest_rotation(R)
        T = np.eye(4)
        T[:3, :3] = R.T
        T[:3, 3] = -R.T @ M[:3, 3]
        out.append((fid, T))
    return out


def format_poses(poses) -> str:
    """Inverse of ``parse_poses``: takes ``(frame_id, T_cw)`` pairs."""
    lines = []
    for fid, T in poses:
        T = np.asarray(T, dtype=np.float64)
        c2w = np.eye(4)
        c2w[:3, :3] = T[:3, :3].T
        c2w[:3, 3] = -T[:3, :3].T @ T[:3, 3]
        lines.append(" ".join([str(int(fid))] + [repr(float(x)) for x in c2w.ravel()]))
    return "\n".join(lines) + "\n"


def _labels_from_colors(sem_u8: np.ndarray, manifest: DatasetManifest, frame_id, snap: bool):
    colors = manifest.palette_colors_u8()
    ids = np.array([i for i, _, _ in manifest.palette], dtype=np.int64)
    match = np.all(sem_u8[..., None, :] == colors, axis=-1)
    hit = match.any(axis=-1)
    if not hit.all():
        if not snap:
            r, c = np.argwhere(~hit)[0]
            raise DatasetError(f"frame {frame_id}: semantic pixel (row {r}, col {c}) color "
                               f"{tuple(sem_u8[r, c])} is not in the palette")
        labels, snapped = snap_to_palette(sem_u8 / 255.0, np.asarray(colors, dtype=np.float64) / 255.0)
        return ids[labels], snapped
    k = np.argmax(match, axis=-1)
    return ids[k], colors[k] / 255.0


def load_dataset(manifest_path, snap_semantic: bool = False) -> Iterator[FrameSet]:
    """Yield frames in manifest order with poses, validity masks and label ids."""
    m = manifest_path if isinstance(manifest_path, DatasetManifest) else load_manifest(manifest_path)
    poses = dict(parse_poses(m.root / m.pose_file))
    for entry in m.frames:
        fid = int(entry["frame_id"])
        if fid not in poses:
            raise DatasetError(f"frame {fid}: no pose in {m.pose_file}")
        T = poses[fid]
        cam = Camera(rotation=T[:3, :3], translation=T[:3, 3], **m.intrinsics)
        rgb = read_rgb_png(m.root / entry["rgb"])
        depth, valid = read_depth_png(m.root / entry["depth"], m.depth_scale)
        sem_u8 = np.round(read_rgb_png(m.root / entry["semantic"]) * 255).astype(np.int64)
        if m.palette:
            labels, semantic = _labels_from_colors(sem_u8, m, fid, snap_semantic)
        else:
            labels, semantic = None, sem_u8 / 255.0
        yield FrameSet(rgb=rgb, depth=depth, semantic=semantic, camera=cam, frame_id=fid,
                       depth_valid=valid, labels=labels)


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SyntheticSceneSpec:
    gmap: GaussianMap
    trajectory: list              # camera-to-world 4x4 matrices
    intrinsics: dict
    palette: list                 # [(label_id, name, rgb in [0, 1])]
    label_flip: float = 0.0
    depth_dropout: float = 0.0
    noise_seed: int = 0
    depth_scale: float = 5000.0

    def cameras(self) -> list[Camera]:
        return [Camera.from_c2w(c2w, **self.intrinsics) for c2w in self.trajectory]

    def to_json(self) -> dict:
        m = self.gmap
        return {
            "intrinsics": self.intrinsics,
            "depth_scale": self.depth_scale,
            "sh_degree_rgb": m.sh_degree_rgb,
            "sh_degree_sem": m.sh_degree_sem,
            "palette": [{"id": int(i), "name": n, "color": [int(round(x * 255)) for x in c]}
                        for i, n, c in self.palette],
            "trajectory": [np.asarray(t, dtype=float).ravel().tolist() for t in self.trajectory],
            "primitives": [
                {"position": m.positions[i].tolist(), "radius": float(m.radii[i]),
                 "opacity": float(m.opacities[i]), "rgb_feature": m.rgb_features[i].tolist(),
                 "semantic_feature": m.sem_features[i].tolist()}
                for i in range(len(m))
            ],
            "noise": {"label_flip": self.label_flip, "depth_dropout": self.depth_dropout, "seed": self.noise_seed},
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticSceneSpec":
        palette = _palette_from_json(d.get("palette", []))
        colors = {i: c for i, _, c in palette}
        deg_rgb, deg_sem = int(d.get("sh_degree_rgb", 0)), int(d.get("sh_degree_sem", 0))
        gmap = GaussianMap(sh_degree_rgb=deg_rgb, sh_degree_sem=deg_sem)
        for p in d.get("primitives", []):
            rgb = np.zeros(gmap.n_rgb_features)
            sem = np.zeros(gmap.n_sem_features)
            if "rgb_feature" in p:
                rgb[:] = p["rgb_feature"]
            else:
                rgb[:3] = rgb_to_dc(p["rgb"])
            if "semantic_feature" in p:
                sem[:] = p["semantic_feature"]
            else:
                sem[:3] = rgb_to_dc(colors[int(p["label"])])
            gmap.append(np.asarray(p["position"], dtype=float)[None], [p["radius"]], [p["opacity"]], rgb[None],
                        sem[None])
        gmap.validate()
        noise = d.get("noise", {})
        return cls(
            gmap=gmap,
            trajectory=[np.asarray(t, dtype=np.float64).reshape(4, 4) for t in d["trajectory"]],
            intrinsics={k: d["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height")},
            palette=palette,
            label_flip=float(noise.get("label_flip", 0.0)),
            depth_dropout=float(noise.get("depth_dropout", 0.0)),
            noise_seed=int(noise.get("seed", 0)),
            depth_scale=float(d.get("depth_scale", 5000.0)),
        )

    @classmethod
    def load(cls, path) -> "SyntheticSceneSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _quantized_frame(out, cam, fid, palette, depth_scale) -> FrameSet:
    ids, colors = snap_to_palette(out.semantic, np.array([c for _, _, c in palette]))
    label_ids = np.array([i for i, _, _ in palette], dtype=np.int64)
    raw = depth_to_raw(out.depth, depth_scale)
    return FrameSet(
        rgb=to_uint8(out.rgb) / 255.0,
        depth=raw / depth_scale,
        depth_valid=raw > 0,
        semantic=to_uint8(colors) / 255.0,
        labels=label_ids[ids],
        camera=cam,
        frame_id=fid,
    )


def synthesize(spec: SyntheticSceneSpec, config: RenderConfig | None = None) -> tuple[list, list]:
    """Render ground truth for every pose: returns (noisy frames, clean frames), both 8/16-bit quantized."""
    config = config or RenderConfig()
    rng = np.random.default_rng(spec.noise_seed)
    label_ids = np.array([i for i, _, _ in spec.palette], dtype=np.int64)
    color_of = {i: np.round(np.asarray(c) * 255) / 255.0 for i, _, c in spec.palette}
    clean, noisy = [], []
    for fid, cam in enumerate(spec.cameras()):
        out = render_naive(spec.gmap, cam, config)
        f = _quantized_frame(out, cam, fid, spec.palette, spec.depth_scale)
        clean.append(f)
        labels = f.labels.copy()
        valid = f.depth_valid.copy()
        if spec.label_flip > 0:
            if len(label_ids) < 2:
                raise ValueError("label flipping needs at least two palette classes")
            flip = rng.random(labels.shape) < spec.label_flip
            # shift to a uniformly chosen different class
            pos = np.searchsorted(label_ids, labels) if np.all(np.diff(label_ids) > 0) else \
                np.array([np.flatnonzero(label_ids == v)[0] for v in labels.ravel()]).reshape(labels.shape)
            shift = rng.integers(1, len(label_ids), size=labels.shape)
            labels = np.where(flip, label_ids[(pos + shift) % len(label_ids)], labels)
        if spec.depth_dropout > 0:
            valid &= ~(rng.random(valid.shape) < spec.depth_dropout)
        semantic = np.stack([color_of[int(v)] for v in labels.ravel()]).reshape(*labels.shape, 3)
        noisy.append(FrameSet(rgb=f.rgb, depth=np.where(valid, f.depth, 0.0), depth_valid=valid,
                              semantic=semantic, labels=labels, camera=cam, frame_id=fid))
    return noisy, clean


def generate_synthetic(spec: SyntheticSceneSpec, out_dir, config: RenderConfig | None = None) -> DatasetManifest:
    """Write the (noisy) synthetic frames as PNGs plus manifest and pose file."""
    out_dir = Path(out_dir)
    for sub in ("rgb", "depth", "semantic"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    frames, _ = synthesize(spec, config)
    entries = []
    for f in frames:
        name = f"{f.frame_id:06d}.png"
        write_rgb_png(out_dir / "rgb" / name, f.rgb)
        write_depth_png(out_dir / "depth" / name, f.depth, spec.depth_scale, f.depth_valid)
        write_rgb_png(out_dir / "semantic" / name, f.semantic)
        entries.append({"frame_id": f.frame_id, "rgb": f"rgb/{name}", "depth": f"depth/{name}",
                        "semantic": f"semantic/{name}"})
    (out_dir / "poses.txt").write_text(format_poses([(f.frame_id, f.camera.w2c) for f in frames]))
    manifest = DatasetManifest(root=out_dir, intrinsics=spec.intrinsics, frames=entries, pose_file="poses.txt",
                               palette=spec.palette, depth_scale=spec.depth_scale)
    manifest.save(out_dir / "manifest.json")
    return manifest


def look_at(center, target) -> np.ndarray:
    """Camera-to-world matrix (x right, y down, z forward) with world +y as down."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, :3] = np.stack([x, y, z], axis=1)
    c2w[:3, 3] = center
    return c2w


A1_PALETTE = [
    (0, "wall", (200 / 255, 180 / 255, 140 / 255)),
    (1, "floor", (70 / 255, 130 / 255, 180 / 255)),
    (2, "box", (220 / 255, 20 / 255, 60 / 255)),
    (3, "ball", (60 / 255, 180 / 255, 75 / 255)),
    (4, "lamp", (255 / 255, 225 / 255, 25 / 255)),
]


def make_a1_spec(seed: int = 0, n_primitives: int = 200, width: int = 128, height: int = 96, n_poses: int = 5,
                 texture_cluster: int = 0, label_flip: float = 0.0, depth_dropout: float = 0.0,
                 noise_seed: int | None = None) -> SyntheticSceneSpec:
    """Desk-scale room corner: back wall, floor and three objects, five semantic classes.

    ``texture_cluster`` adds that many small checkerboard-colored primitives on
    the wall to give the scene fine detail.
    """
    rng = np.random.default_rng(seed)
    base_rgb = {0: (0.75, 0.68, 0.55), 1: (0.35, 0.30, 0.25), 2: (0.80, 0.25, 0.20), 3: (0.25, 0.55, 0.30),
                4: (0.90, 0.85, 0.40)}
    n_wall = int(round(0.35 * n_primitives))
    n_floor = int(round(0.25 * n_primitives))
    n_obj = n_primitives - n_wall - n_floor
    pos, rad, lab = [], [], []

    def add(p, r, cls):
        pos.append(p)
        rad.append(r)
        lab.extend([cls] * len(p))

    # wall: jittered grid on z = 3.2
    gx, gy = 10, max(1, n_wall // 10)
    xs, ys = np.meshgrid(np.linspace(-1.9, 1.9, gx), np.linspace(-1.3, 0.95, gy))
    wall = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, 3.2)], axis=1)[:n_wall]
    wall[:, :2] += rng.normal(scale=0.03, size=(len(wall), 2))
    add(wall, rng.uniform(0.22, 0.27, len(wall)), 0)

    # floor: jittered grid on y = 0.9
    fx, fz = 10, max(1, n_floor // 10)
    xs, zs = np.meshgrid(np.linspace(-1.9, 1.9, fx), np.linspace(1.2, 3.1, fz))
    floor = np.stack([xs.ravel(), np.full(xs.size, 0.9), zs.ravel()], axis=1)[:n_floor]
    floor[:, [0, 2]] += rng.normal(scale=0.03, size=(len(floor), 2))
    add(floor, rng.uniform(0.2, 0.25, len(floor)), 1)

    # objects: box, ball, lamp resting on the floor
    centers = {2: np.array([-0.7, 0.55, 2.5]), 3: np.array([0.5, 0.6, 2.2]), 4: np.array([0.9, 0.1, 2.9])}
    spreads = {2: np.array([0.3, 0.3, 0.3]), 3: np.array([0.25, 0.25, 0.25]), 4: np.array([0.12, 0.6, 0.12])}
    per = [n_obj // 3, n_obj // 3, n_obj - 2 * (n_obj // 3)]
    for (cls, c), k in zip(centers.items(), per):
        if cls == 3:
            d = rng.normal(size=(k, 3))
            p = c + spreads[cls] * d / np.linalg.norm(d, axis=1, keepdims=True)
        else:
            p = c + spreads[cls] * rng.uniform(-1, 1, (k, 3))
        add(p, rng.uniform(0.07, 0.11, k), cls)

    positions = np.concatenate(pos)
    radii = np.concatenate(rad)
    labels = np.array(lab)
    colors = np.clip(np.array([base_rgb[c] for c in labels]) + rng.normal(scale=0.06, size=(len(labels), 3)),
                     0.05, 0.95)
    opacities = np.where(labels < 2, rng.uniform(0.9, 0.99, len(labels)), rng.uniform(0.75, 0.95, len(labels)))

    if texture_cluster:
        side = int(np.ceil(np.sqrt(texture_cluster)))
        ii, jj = np.meshgrid(np.arange(side), np.arange(side))
        ii, jj = ii.ravel()[:texture_cluster], jj.ravel()[:texture_cluster]
        tex = np.stack([-0.4 + 0.06 * ii, -0.7 + 0.06 * jj, np.full(len(ii), 3.15)], axis=1)
        checker = ((ii + jj) % 2).astype(float)
        positions = np.concatenate([positions, tex])
        radii = np.concatenate([radii, np.full(len(ii), 0.035)])
        labels = np.concatenate([labels, np.zeros(len(ii), dtype=int)])
        colors = np.concatenate([colors, np.stack([0.1 + 0.8 * checker] * 3, axis=1)])
        opacities = np.concatenate([opacities, np.full(len(ii), 0.95)])

    palette = list(A1_PALETTE)
    sem_colors = np.array([palette[c][2] for c in labels])
    gmap = GaussianMap(positions, radii, opacities, rgb_to_dc(colors), rgb_to_dc(sem_colors))

    target = np.array([0.0, 0.2, 2.6])
    angles = np.linspace(-0.2, 0.2, n_poses) if n_poses > 1 else np.zeros(1)
    trajectory = [look_at(target + np.array([2.4 * np.sin(a), -0.35, -2.4 * np.cos(a)]), target) for a in angles]
    f = 1.1 * width
    intrinsics = dict(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height)
    return SyntheticSceneSpec(gmap, trajectory, intrinsics, palette, label_flip, depth_dropout,
                              seed if noise_seed is None else noise_seed)


def perturb_map(gmap: GaussianMap, seed: int = 0, position_sigma: float = 0.02, color_sigma: float = 0.1,
                opacity_sigma: float = 0.1) -> GaussianMap:
    """Noisy copy of a map: jittered positions, DC colors (both channels) and opacities."""
    from .sh import SH_C0

    rng = np.random.default_rng(seed)
    m = gmap.copy()
    n = len(m)
    m.positions += rng.normal(scale=position_sigma, size=(n, 3))
    m.rgb_features[:, :3] += rng.normal(scale=color_sigma, size=(n, 3)) / SH_C0
    m.sem_features[:, :3] += rng.normal(scale=color_sigma, size=(n, 3)) / SH_C0
    m.opacities = np.clip(m.opacities + rng.normal(scale=opacity_sigma, size=n), 0.05, 0.99)
    return m
