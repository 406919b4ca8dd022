"""Supported-plane estimation and gravity alignment.

The supported plane (tabletop or floor) is found with RANSAC, its normal is
rotated onto +Z with the Rodrigues construction, and the scene is recentered
so the plane becomes z = 0 with the scene centroid above the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, LowConfidenceError
from .geometry import Intrinsics, Plane, RigidTransform, matrix_to_quat
from .unprojection import PointCloud

# below this, n x z is too short to define the rotation axis of the general case
ANTIPODAL_AXIS_EPS = 1e-8


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_distance: float = 0.008
    min_inlier_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not self.inlier_distance > 0:
            raise ConfigurationError("inlier_distance must be positive")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ConfigurationError("min_inlier_fraction must be in (0, 1]")


@dataclass(frozen=True)
class AlignmentResult:
    plane: Plane  # camera frame, oriented so objects are on the positive side
    rotation: np.ndarray  # quaternion of R, maps plane.normal to +Z
    world_from_camera: RigidTransform
    inlier_count: int

    @property
    def camera_pose(self) -> RigidTransform:
        """Camera pose in the world frame (same map as world_from_camera)."""
        return self.world_from_camera


# ---------------------------------------------------------------------------
# RANSAC


def _sample_triplets(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """``count`` triplets of distinct indices in [0, n)."""
    i0 = rng.integers(0, n, count)
    i1 = rng.integers(0, n - 1, count)
    i2 = rng.integers(0, n - 2, count)
    i1 = i1 + (i1 >= i0)
    lo, hi = np.minimum(i0, i1), np.maximum(i0, i1)
    i2 = i2 + (i2 >= lo)
    i2 = i2 + (i2 >= hi)
    return np.column_stack([i0, i1, i2])


def _fit_plane_lsq(points: np.ndarray) -> Plane:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    n = vt[-1]
    return Plane(n, float(n @ centroid))


def _canonical(plane: Plane) -> Plane:
    # origin (the camera, for camera-frame clouds) on the positive side
    if plane.offset > 0:
        return plane.flipped()
    if plane.offset == 0:
        k = int(np.argmax(np.abs(plane.normal)))
        if plane.normal[k] < 0:
            return plane.flipped()
    return plane


def fit_plane_ransac(points: np.ndarray, cfg: RansacConfig, chunk_elements: int = 4_000_000) -> tuple[Plane, np.ndarray]:
    """RANSAC plane plus least-squares refinement; returns (plane, inlier mask).

    All hypothesis indices are drawn from the seeded generator before any
    scoring, and score ties resolve to the lowest hypothesis index, so the
    result does not depend on how scoring is chunked.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n < 3:
        raise DegenerateInputError(f"RANSAC needs at least 3 points, got {n}")
    rng = np.random.default_rng(cfg.seed)
    triplets = _sample_triplets(rng, n, cfg.iterations)

    a, b, c = points[triplets[:, 0]], points[triplets[:, 1]], points[triplets[:, 2]]
    normals = np.cross(b - a, c - a)
    lengths = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1), 1e-300)
    usable = lengths > 1e-10 * scale
    if not usable.any():
        raise DegenerateInputError("every RANSAC sample was collinear")
    normals[usable] /= lengths[usable, None]
    offsets = np.einsum("ij,ij->i", normals, a)

    counts = np.full(cfg.iterations, -1, dtype=np.int64)
    step = max(1, chunk_elements // n)
    for start in range(0, cfg.iterations, step):
        sl = slice(start, start + step)
        dist = np.abs(normals[sl] @ points.T - offsets[sl, None])
        counts[sl] = np.where(usable[sl], (dist <= cfg.inlier_distance).sum(axis=1), -1)
    best = int(np.argmax(counts))

    inliers = np.abs(points @ normals[best] - offsets[best]) <= cfg.inlier_distance
    plane = Plane(normals[best], offsets[best])
    for _ in range(3):
        if inliers.sum() < 3:
            break
        plane = _fit_plane_lsq(points[inliers])
        refreshed = np.abs(plane.signed_distance(points)) <= cfg.inlier_distance
        if np.array_equal(refreshed, inliers):
            break
        inliers = refreshed
    plane = _canonical(plane)

    count = int(inliers.sum())
    if count < cfg.min_inlier_fraction * n:
        raise LowConfidenceError(
            f"best plane has {count}/{n} inliers, below the {cfg.min_inlier_fraction:.0%} floor",
            plane=plane,
            inlier_count=count,
        )
    return plane, inliers


def ransac_plane(candidates: PointCloud | np.ndarray, cfg: RansacConfig) -> Plane:
    points = candidates.points if isinstance(candidates, PointCloud) else candidates
    return fit_plane_ransac(points, cfg)[0]


# ---------------------------------------------------------------------------
# Rodrigues


def rodrigues_matrix_to_z(normals) -> np.ndarray:
    """Rotation matrices R with R n = +Z, for (3,) or (N, 3) unit normals.

    R = I + sin(theta) [k]x + (1 - cos(theta)) [k]x^2 with k = n x z / |n x z|
    and cos(theta) = n . z. Written with v = n x z = (ny, -nx, 0) so that
    sin(theta) = |v| and no arccos is needed:

        R = I + [v]x + f (v v^T - |v|^2 I),   f = (1 - cos) / sin^2

    f is evaluated as 1 / (1 + cos) on the near-identity side to avoid
    cancellation. Within ANTIPODAL_AXIS_EPS of n = -z, the rotation is a half
    turn about +X followed by the (then well-conditioned) residual rotation.
    """
    n = np.asarray(normals, dtype=np.float64)
    single = n.ndim == 1
    n = n.reshape(-1, 3)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)

    antipodal = (np.hypot(n[:, 0], n[:, 1]) < ANTIPODAL_AXIS_EPS) & (n[:, 2] < 0)
    flip = np.diag([1.0, -1.0, -1.0])
    m = n.copy()
    m[antipodal] = m[antipodal] @ flip.T

    nx, ny, c = m[:, 0], m[:, 1], m[:, 2]
    s2 = nx * nx + ny * ny
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(c > 0, 1.0 / (1.0 + c), (1.0 - c) / s2)
    f = np.where(s2 == 0, 0.0, f)
    vx, vy = ny, -nx

    r = np.zeros((len(m), 3, 3))
    # identity + skew(v) with v = (vx, vy, 0)
    r[:, 0, 0] = 1.0 + f * (vx * vx - s2)
    r[:, 0, 1] = f * vx * vy
    r[:, 0, 2] = vy
    r[:, 1, 0] = f * vx * vy
    r[:, 1, 1] = 1.0 + f * (vy * vy - s2)
    r[:, 1, 2] = -vx
    r[:, 2, 0] = -vy
    r[:, 2, 1] = vx
    r[:, 2, 2] = 1.0 - f * s2
    r[antipodal] = r[antipodal] @ flip
    return r[0] if single else r


def rodrigues_to_z(n) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of the minimal rotation taking n to +Z."""
    return matrix_to_quat(rodrigues_matrix_to_z(n))


# ---------------------------------------------------------------------------
# Scene alignment


def align_scene(
    cloud: PointCloud,
    ground_candidates: PointCloud | None,
    K: Intrinsics | None,
    cfg: RansacConfig,
) -> AlignmentResult:
    """Gravity-align a camera-frame scene cloud.

    The plane comes from ``ground_candidates`` (or the whole cloud when none
    are given). Its normal is oriented so most off-plane points lie on the
    positive side; on a tie the camera side wins. The world origin is the
    full-cloud centroid projected onto the plane.
    """
    points = cloud.points
    if len(points) == 0:
        raise DegenerateInputError("scene cloud is empty")
    if ground_candidates is None or len(ground_candidates) == 0:
        ground_candidates = cloud
    plane, inliers = fit_plane_ransac(ground_candidates.points, cfg)

    dist = plane.signed_distance(points)
    off = np.abs(dist) > cfg.inlier_distance
    above = int((dist[off] > 0).sum())
    below = int((dist[off] < 0).sum())
    if below > above:
        plane = plane.flipped()

    r = rodrigues_matrix_to_z(plane.normal)
    centroid = r @ points.mean(axis=0)
    t = np.array([-centroid[0], -centroid[1], -plane.offset])
    world_from_camera = RigidTransform.from_matrix(r, t)
    return AlignmentResult(plane, matrix_to_quat(r), world_from_camera, int(inliers.sum()))
