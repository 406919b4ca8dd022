"""Depth-gated compositing of rendered frames over the real background.

A rendered pixel replaces the background pixel only where its depth is
strictly nearer than the background depth minus ``epsilon``:

    mask = D_t < D_B - epsilon
    out  = I_t where mask else I_B

Invalid rendered depth (0, negative, non-finite) never wins. Invalid
background depth counts as infinitely far, so any valid rendered pixel wins
there. Outputs are hard selections; every output byte comes from I_t or I_B.

Frame directory layout
----------------------
Input, one group per frame with a six-digit zero-padded index ``NNNNNN``
starting at 000000 and contiguous::

    NNNNNN_color.png    8-bit RGB (alpha dropped if present)
    NNNNNN_depth.tiff   float32 meters, 0 = no geometry
                        (NNNNNN_depth.png, 16-bit millimeters, is also read)
    NNNNNN_action.bin   optional, opaque bytes

Output::

    NNNNNN_blend.png    8-bit RGB
    NNNNNN_mask.png     8-bit, 255 where the rendered pixel was kept (only with export_masks)
    NNNNNN_action.bin   byte-identical copy when present in the input
    blend_meta.json     epsilon, frame count, background depth source
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, SceneError
from .raster import load_color, load_depth, save_color, save_mask
from .scene import dumps_json

DEFAULT_EPSILON = 0.005
_FRAME_RE = re.compile(r"^(\d{6})_color\.png$")


@dataclass(frozen=True)
class BlendConfig:
    epsilon: float = DEFAULT_EPSILON
    export_masks: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigurationError("epsilon must be a finite value >= 0")


@dataclass(frozen=True)
class Frame:
    color: np.ndarray
    depth: np.ndarray
    action: bytes | None = None


@dataclass(frozen=True)
class BlendedFrame:
    color: np.ndarray
    action: bytes | None
    mask: np.ndarray | None = None


def _same_shape(name_a, a, name_b, b, dims=2):
    if a.shape[:dims] != b.shape[:dims]:
        raise ConfigurationError(f"{name_a} shape {a.shape[:dims]} does not match {name_b} shape {b.shape[:dims]}")


def blend_mask(rendered_depth: np.ndarray, background_depth: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Boolean mask of pixels where the rendered content is in front."""
    dt = np.asarray(rendered_depth, dtype=np.float64)
    db = np.asarray(background_depth, dtype=np.float64)
    if dt.ndim != 2:
        raise ConfigurationError("depth rasters must be 2-D")
    _same_shape("rendered depth", dt, "background depth", db)
    if not (np.isfinite(epsilon) and epsilon >= 0):
        raise ConfigurationError("epsilon must be a finite value >= 0")
    with np.errstate(invalid="ignore"):
        valid_t = np.isfinite(dt) & (dt > 0)
        db = np.where(np.isfinite(db) & (db > 0), db, np.inf)
        return valid_t & (dt < db - epsilon)


def blend_frame(
    rendered: np.ndarray,
    rendered_depth: np.ndarray,
    background: np.ndarray,
    background_depth: np.ndarray,
    cfg: BlendConfig = BlendConfig(),
    return_mask: bool = False,
):
    """Per-pixel selection between the render and the background image."""
    it = np.asarray(rendered)
    ib = np.asarray(background)
    if it.dtype != np.uint8 or ib.dtype != np.uint8:
        raise ConfigurationError("color images must be uint8")
    _same_shape("rendered image", it, "background image", ib, dims=3)
    _same_shape("rendered image", it, "rendered depth", np.asarray(rendered_depth))
    mask = blend_mask(rendered_depth, background_depth, cfg.epsilon)
    out = np.where(mask[..., None], it, ib)
    return (out, mask) if return_mask else out


def blend_sequence(
    frames,
    background: np.ndarray,
    background_depth: np.ndarray,
    cfg: BlendConfig = BlendConfig(),
    workers: int = 1,
) -> list[BlendedFrame]:
    """Blend every frame; action payloads pass through untouched, order preserved."""
    frames = list(frames)

    def one(k: int) -> BlendedFrame:
        f = frames[k]
        try:
            out, mask = blend_frame(f.color, f.depth, background, background_depth, cfg, return_mask=True)
        except SceneError as exc:
            raise type(exc)(f"frame {k}: {exc}") from exc
        return BlendedFrame(out, f.action, mask if cfg.export_masks else None)

    if workers > 1 and len(frames) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(frames))))
    return [one(k) for k in range(len(frames))]


# ---------------------------------------------------------------------------
# Frame directories


def frame_indices(directory) -> list[int]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"frame directory not found: {d}")
    found = sorted(int(m.group(1)) for p in d.iterdir() if (m := _FRAME_RE.match(p.name)))
    if not found:
        raise InputError(f"no NNNNNN_color.png frames in {d}")
    if found != list(range(len(found))):
        missing = sorted(set(range(found[-1] + 1)) - set(found))
        raise InputError(f"frame indices must be contiguous from 0; missing {missing[:5]}")
    return found


def read_frame(directory, index: int) -> Frame:
    d = Path(directory)
    stem = f"{index:06d}"
    color = load_color(d / f"{stem}_color.png")
    depth_path = d / f"{stem}_depth.tiff"
    if not depth_path.exists():
        depth_path = d / f"{stem}_depth.png"
    try:
        depth = load_depth(depth_path)
    except InputError as exc:
        raise InputError(f"frame {index}: {exc}") from exc
    action_path = d / f"{stem}_action.bin"
    action = action_path.read_bytes() if action_path.exists() else None
    return Frame(color, depth, action)


def read_frames(directory) -> list[Frame]:
    return [read_frame(directory, k) for k in frame_indices(directory)]


def write_frame(directory, index: int, frame: Frame) -> None:
    """Write a rendered frame in the input layout (used by tests and demos)."""
    from .raster import save_depth

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{index:06d}"
    save_color(d / f"{stem}_color.png", frame.color)
    save_depth(d / f"{stem}_depth.tiff", frame.depth)
    if frame.action is not None:
        (d / f"{stem}_action.bin").write_bytes(frame.action)


def write_blended(directory, blended: list[BlendedFrame], meta: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(blended):
        stem = f"{k:06d}"
        save_color(d / f"{stem}_blend.png", f.color)
        if f.mask is not None:
            save_mask(d / f"{stem}_mask.png", f.mask.astype(np.uint8) * 255)
        if f.action is not None:
            (d / f"{stem}_action.bin").write_bytes(f.action)
    (d / "blend_meta.json").write_text(dumps_json(meta), encoding="utf-8")
    return d
