"""Raster file formats.

Depth
    16-bit unsigned PNG in millimeters (0 = invalid), or 32-bit float TIFF in
    meters (<= 0 or non-finite = invalid). ``.npy`` float arrays are also
    accepted. Loading always returns float64 meters.
Color
    8-bit RGB PNG, row-major, shape (H, W, 3).
Instance masks
    8-bit or 16-bit single-channel PNG; 0 = background, k >= 1 = object k.

In memory these are plain numpy arrays indexed ``[row, column]``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, InputError
from .geometry import Intrinsics


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    return path


def load_depth(path) -> np.ndarray:
    path = _require(path)
    if path.suffix.lower() == ".npy":
        return np.load(path).astype(np.float64)
    with Image.open(path) as im:
        mode = im.mode
        arr = np.array(im)
    if mode in ("I;16", "I;16B", "I;16L") or arr.dtype == np.uint16:
        return arr.astype(np.float64) / 1000.0
    if mode == "F":
        return arr.astype(np.float64)
    if mode == "I":
        # some writers widen 16-bit PNGs to 32-bit integer mode
        return arr.astype(np.float64) / 1000.0
    raise InputError(f"unrecognized depth raster mode {mode!r} in {path}")


def save_depth(path, depth: np.ndarray, millimeters: bool = False) -> None:
    """Float TIFF in meters by default; ``millimeters=True`` writes a 16-bit PNG."""
    path = Path(path)
    depth = np.asarray(depth, dtype=np.float64)
    if millimeters:
        mm = np.where(valid_depth(depth), np.round(depth * 1000.0), 0)
        Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(depth.astype(np.float32), mode="F").save(path)


def load_color(path) -> np.ndarray:
    path = _require(path)
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def save_color(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    path = _require(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "I;16", "I;16B", "I;16L", "I", "P", "1"):
            raise InputError(f"mask must be single-channel, got mode {im.mode!r}")
        return np.array(im).astype(np.int64)


def save_mask(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0:
        raise ConfigurationError("mask labels must be non-negative")
    dtype = np.uint8 if labels.max(initial=0) < 256 else np.uint16
    Image.fromarray(labels.astype(dtype)).save(path)


def load_intrinsics(path) -> Intrinsics:
    path = _require(path)
    return Intrinsics.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_intrinsics(path, K: Intrinsics) -> None:
    Path(path).write_text(json.dumps(K.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def check_shape(name: str, array: np.ndarray, shape: tuple[int, int]) -> None:
    if tuple(np.asarray(array).shape[:2]) != tuple(shape):
        raise ConfigurationError(f"{name} has shape {np.asarray(array).shape[:2]}, expected {tuple(shape)}")
