"""Binary little-endian PLY storage for Gaussian maps.

Per-vertex properties: ``x y z radius opacity f_rgb_<i> f_sem_<i>`` as
32-bit floats, followed by ``keyframe_id iteration_added`` as 32-bit ints.
SH degrees travel in header comments.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import GaussianMap, MapValidationError, n_sh_coeffs

__all__ = ["MapFormatError", "save_map", "load_map"]

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
}


class MapFormatError(ValueError):
    pass


def _property_names(k_rgb: int, k_sem: int) -> list[str]:
    return (["x", "y", "z", "radius", "opacity"]
            + [f"f_rgb_{i}" for i in range(k_rgb)]
            + [f"f_sem_{i}" for i in range(k_sem)])


def save_map(gmap: GaussianMap, path) -> None:
    path = Path(path)
    names = _property_names(gmap.n_rgb_features, gmap.n_sem_features)
    dtype = np.dtype([(n, "<f4") for n in names] + [("keyframe_id", "<i4"), ("iteration_added", "<i4")])
    rows = np.empty(len(gmap), dtype=dtype)
    cols = np.concatenate(
        [gmap.positions, gmap.radii[:, None], gmap.opacities[:, None], gmap.rgb_features, gmap.sem_features], axis=1)
    for j, n in enumerate(names):
        rows[n] = cols[:, j]
    rows["keyframe_id"] = gmap.keyframe_ids
    rows["iteration_added"] = gmap.iterations_added

    header = ["ply", "format binary_little_endian 1.0",
              f"comment sh_degree_rgb {gmap.sh_degree_rgb}",
              f"comment sh_degree_sem {gmap.sh_degree_sem}",
              f"element vertex {len(gmap)}"]
    header += [f"property float {n}" for n in names]
    header += ["property int keyframe_id", "property int iteration_added", "end_header"]
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(rows.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write map to {os.fspath(path)}: {exc}") from exc


def _read_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise MapFormatError(f"{path}: not a PLY file")
    degrees = {}
    props = []
    n_vertex = None
    fmt = None
    in_vertex = False
    while True:
        raw = fh.readline()
        if not raw:
            raise MapFormatError(f"{path}: header has no end_header")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok:
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment" and len(tok) == 3 and tok[1] in ("sh_degree_rgb", "sh_degree_sem"):
            degrees[tok[1]] = int(tok[2])
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
            elif int(tok[2]) != 0:
                raise MapFormatError(f"{path}: unsupported element '{tok[1]}'")
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise MapFormatError(f"{path}: list properties are not supported")
            if tok[1] not in _PLY_TYPES:
                raise MapFormatError(f"{path}: unknown property type '{tok[1]}'")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise MapFormatError(f"{path}: expected binary_little_endian format, got {fmt}")
    if n_vertex is None:
        raise MapFormatError(f"{path}: missing vertex element")
    return degrees, props, n_vertex


def load_map(path) -> GaussianMap:
    path = Path(path)
    with open(path, "rb") as fh:
        degrees, props, n = _read_header(fh, path)
        dtype = np.dtype(props)
        data = fh.read(dtype.itemsize * n)
    if len(data) != dtype.itemsize * n:
        raise MapFormatError(f"{path}: truncated vertex data")
    rows = np.frombuffer(data, dtype=dtype, count=n)

    names = set(dtype.names or ())
    deg_rgb = degrees.get("sh_degree_rgb", 0)
    deg_sem = degrees.get("sh_degree_sem", 0)
    try:
        k_rgb, k_sem = 3 * n_sh_coeffs(deg_rgb), 3 * n_sh_coeffs(deg_sem)
    except ValueError as exc:
        raise MapFormatError(f"{path}: {exc}") from exc
    for required in _property_names(k_rgb, k_sem):
        if required not in names:
            raise MapFormatError(f"{path}: missing required property '{required}'")

    def cols(prefix, k):
        if k == 0:
            return np.zeros((n, 0))
        return np.stack([rows[f"{prefix}{i}"].astype(np.float64) for i in range(k)], axis=1)

    gmap = GaussianMap(
        positions=np.stack([rows[c].astype(np.float64) for c in "xyz"], axis=1).reshape(n, 3),
        radii=rows["radius"].astype(np.float64),
        opacities=rows["opacity"].astype(np.float64),
        rgb_features=cols("f_rgb_", k_rgb),
        sem_features=cols("f_sem_", k_sem),
        sh_degree_rgb=deg_rgb,
        sh_degree_sem=deg_sem,
        keyframe_ids=rows["keyframe_id"] if "keyframe_id" in names else None,
        iterations_added=rows["iteration_added"] if "iteration_added" in names else None,
    )
    try:
        gmap.validate()
    except MapValidationError as exc:
        err = MapValidationError(f"{path}: {exc}")
        err.index = exc.index
        raise err from exc
    return gmap
