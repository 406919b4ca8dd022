"""Metric depth to labeled point clouds, and the pinhole projection back."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BehindCameraError, ConfigurationError, PreconditionError
from .geometry import Intrinsics
from .raster import check_shape, valid_depth


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3); optional pixel provenance (N, 2) as (column, row); optional labels (N,)."""

    points: np.ndarray
    pixels: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.pixels is not None:
            object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> PointCloud:
        return PointCloud(
            self.points[index],
            None if self.pixels is None else self.pixels[index],
            None if self.labels is None else self.labels[index],
        )

    def transformed(self, T) -> PointCloud:
        return replace(self, points=T.apply(self.points))

    @staticmethod
    def concatenate(clouds: list[PointCloud]) -> PointCloud:
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pix = None
        if all(c.pixels is not None for c in clouds):
            pix = np.concatenate([c.pixels for c in clouds])
        lab = None
        if all(c.labels is not None for c in clouds):
            lab = np.concatenate([c.labels for c in clouds])
        return PointCloud(np.concatenate([c.points for c in clouds]), pix, lab)


def unproject(depth: np.ndarray, K: Intrinsics) -> PointCloud:
    """One camera-frame point per valid-depth pixel, in row-major order.

    X = D(u, v) * K^-1 [u, v, 1]^T with (u, v) at the pixel center, so each
    point's z equals the depth value exactly.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ConfigurationError("depth must be a 2-D array")
    check_shape("depth", depth, K.shape)
    rows, cols = np.nonzero(valid_depth(depth))
    d = depth[rows, cols]
    x = (cols + 0.5 - K.cx) / K.fx * d
    y = (rows + 0.5 - K.cy) / K.fy * d
    return PointCloud(np.column_stack([x, y, d]), np.column_stack([cols, rows]))


def project(points, K: Intrinsics) -> np.ndarray:
    """(u, v, depth) for camera-frame points; accepts (3,) or (N, 3)."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    if np.any(p[:, 2] <= 0):
        raise BehindCameraError("cannot project a point with z <= 0")
    z = p[:, 2]
    out = np.column_stack([K.fx * p[:, 0] / z + K.cx, K.fy * p[:, 1] / z + K.cy, z])
    return out[0] if single else out


def partition(cloud: PointCloud, mask: np.ndarray) -> tuple[PointCloud, dict[int, PointCloud]]:
    """Route each point by the mask label at its source pixel.

    Returns the background cloud (label 0) and a dict label -> object cloud.
    Output clouds carry the label array.
    """
    if cloud.pixels is None:
        raise PreconditionError("partition needs per-point pixel provenance")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ConfigurationError("mask must be a 2-D label raster")
    if len(cloud) and (
        cloud.pixels[:, 0].max() >= mask.shape[1] or cloud.pixels[:, 1].max() >= mask.shape[0]
    ):
        raise ConfigurationError("point provenance lies outside the mask")
    labels = mask[cloud.pixels[:, 1], cloud.pixels[:, 0]].astype(np.int64)
    labelled = PointCloud(cloud.points, cloud.pixels, labels)
    background = labelled.subset(labels == 0)
    objects = {int(k): labelled.subset(labels == k) for k in np.unique(mask) if k > 0}
    return background, objects
