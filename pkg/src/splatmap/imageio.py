"""PNG codecs: 8-bit color in [0, 1] and 16-bit depth with a raw-units-per-meter scale."""
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_rgb_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(Path(path))


def read_rgb_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"))
    return arr.astype(np.float64) / 255.0


def depth_to_raw(depth: np.ndarray, depth_scale: float, valid=None) -> np.ndarray:
    raw = np.round(np.nan_to_num(depth, nan=0.0) * depth_scale)
    raw = np.clip(raw, 0, 65535).astype(np.uint16)
    if valid is not None:
        raw[~valid] = 0
    return raw


def write_depth_png(path, depth: np.ndarray, depth_scale: float = 5000.0, valid=None) -> None:
    Image.fromarray(depth_to_raw(depth, depth_scale, valid)).save(Path(path))


def read_depth_png(path, depth_scale: float = 5000.0) -> tuple[np.ndarray, np.ndarray]:
    """Returns (depth in meters, validity mask); raw 0 is invalid."""
    with Image.open(Path(path)) as im:
        raw = np.asarray(im).astype(np.float64)
    valid = raw > 0
    return np.where(valid, raw / depth_scale, 0.0), valid
