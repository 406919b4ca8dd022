"""Mesh-to-point registration.

A generated object mesh arrives in an arbitrary canonical frame and size.
It is rescaled against the observed partial cloud, then posed with
multi-start point-to-point ICP.

Correspondences run from each target point to its nearest mesh surface
sample, so every observed point pulls while unobserved mesh regions
(backsides) are free. The objective is the truncated squared distance
``mean(min(d^2, c^2))`` with a cutoff ``c`` that shrinks geometrically to
``correspondence_cutoff``; each Procrustes step and each cutoff reduction
can only lower it, which makes the reported RMS non-increasing.

``refine_visible`` is an optional second stage that frees the scale. It
compares the target with what the camera would see of the posed mesh, so
silhouettes constrain size; ``recover`` runs it by default.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DegenerateInputError, RegistrationFailedError
from .geometry import Intrinsics, RigidTransform, SimilarityTransform, rot_y, rot_z, skew
from .mesh import TriangleMesh
from .unprojection import PointCloud

SCALE_QUANTILE = 0.5
START_CUTOFF_QUANTILE = 0.98
MIN_CUTOFF = 0.005
CUTOFF_SPACING_FACTOR = 3.0
PITCHES = (0.0, np.pi / 4, -np.pi / 4)


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 100
    convergence_delta: float = 1e-7
    surface_samples: int = 20000
    rotation_starts: int = 24
    correspondence_cutoff: float | None = None  # None: 3x median target spacing, floor 5 mm
    seed: int = 0
    cutoff_decay: float = 0.8
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.surface_samples < 100:
            raise ConfigurationError("surface_samples must be >= 100")
        if self.rotation_starts < 1:
            raise ConfigurationError("rotation_starts must be >= 1")
        if self.correspondence_cutoff is not None and not self.correspondence_cutoff > 0:
            raise ConfigurationError("correspondence_cutoff must be positive")
        if not 0 < self.cutoff_decay <= 1:
            raise ConfigurationError("cutoff_decay must be in (0, 1]")


@dataclass(frozen=True)
class RegistrationResult:
    pose: SimilarityTransform
    rms: float
    iterations_used: int
    start_index: int
    cutoff: float = 0.0
    rms_history: tuple = ()
    start_rms: tuple = field(default=(), repr=False)
    start_poses: tuple = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# Sampling and scale


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0, return_triangles: bool = False):
    """Area-uniform samples on the mesh surface, deterministic in ``seed``."""
    if mesh.is_empty:
        raise DegenerateInputError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateInputError("mesh has zero surface area")
    if n <= 0:
        cloud = PointCloud(np.zeros((0, 3)))
        return (cloud, np.zeros(0, np.int64)) if return_triangles else cloud
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas / total)
    tri = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    cloud = PointCloud(pts)
    return (cloud, tri) if return_triangles else cloud


def robust_extent(points: np.ndarray, quantile: float = SCALE_QUANTILE) -> tuple[float, np.ndarray]:
    """Radius holding ``quantile`` of the points around a robust center.

    The center starts at the coordinate-wise median and is re-estimated
    twice as the mean of the points inside the current radius. The default
    median radius tolerates heavy outlier contamination. Returns (radius, center).
    """
    p = np.asarray(points, dtype=np.float64)
    center = np.median(p, axis=0)
    for _ in range(2):
        d = np.linalg.norm(p - center, axis=1)
        center = p[d <= np.quantile(d, quantile)].mean(axis=0)
    return float(np.quantile(np.linalg.norm(p - center, axis=1), quantile)), center


def estimate_scale(mesh: TriangleMesh, target: PointCloud, samples: np.ndarray | None = None, seed: int = 0) -> float:
    """Ratio of robust extents, target over mesh surface samples."""
    if len(target) == 0:
        raise DegenerateInputError("target cloud is empty")
    if samples is None:
        samples = sample_surface(mesh, 20000, seed).points
    r_target, _ = robust_extent(target.points)
    r_mesh, _ = robust_extent(samples)
    if not (r_target > 0 and r_mesh > 0):
        raise DegenerateInputError("zero extent; cannot estimate scale")
    return r_target / r_mesh


def default_cutoff(target: np.ndarray) -> float:
    if len(target) < 2:
        return MIN_CUTOFF
    d, _ = cKDTree(target).query(target, k=2)
    return max(MIN_CUTOFF, CUTOFF_SPACING_FACTOR * float(np.median(d[:, 1])))


def start_rotations(count: int) -> list[np.ndarray]:
    """Yaw grid about +Z crossed with {0, +45, -45} degree pitch, yaw-major."""
    n_pitch = len(PITCHES) if count >= len(PITCHES) else 1
    n_yaw = max(1, count // n_pitch)
    out = []
    for i in range(n_yaw):
        yaw = 2 * np.pi * i / n_yaw
        for pitch in PITCHES[:n_pitch]:
            out.append(rot_z(yaw) @ rot_y(pitch))
    return out[:count]


# ---------------------------------------------------------------------------
# ICP


def procrustes(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with R src + t ~ dst."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


def truncated_rms(tree: cKDTree, target_local: np.ndarray, cutoff: float) -> tuple[float, np.ndarray, np.ndarray]:
    d, j = tree.query(target_local, distance_upper_bound=cutoff)
    ok = np.isfinite(d)
    e = np.where(ok, d * d, cutoff * cutoff)
    return float(np.sqrt(e.mean())), ok, j


def _run_icp(tree, model, target, r, t, cutoff0, cutoff, cfg):
    """One ICP from (r, t). Returns (r, t, rms, iterations, history, final cutoff)."""
    c = cutoff0
    history = []
    it = 0
    while True:
        local = (target - t) @ r  # world -> scaled mesh frame, distances preserved
        rms, ok, j = truncated_rms(tree, local, c)
        history.append(rms)
        converged = c <= cutoff and len(history) > 1 and history[-2] - rms < cfg.convergence_delta
        if converged or it >= cfg.max_iterations:
            break
        if not ok.any():
            return None
        r, t = procrustes(model[j[ok]], target[ok])
        c = max(cutoff, c * cfg.cutoff_decay)
        it += 1
    return r, t, rms, it, tuple(history), c


def icp_register(
    mesh: TriangleMesh,
    target: PointCloud,
    cfg: IcpConfig = IcpConfig(),
    init: SimilarityTransform | None = None,
) -> RegistrationResult:
    """Scale once, then multi-start point-to-point ICP; lowest final RMS wins.

    With ``init`` given, a single ICP runs from that pose and its scale.
    """
    pts = target.points
    if len(pts) < 10:
        raise DegenerateInputError(f"registration needs >= 10 target points, got {len(pts)}")
    samples = sample_surface(mesh, cfg.surface_samples, cfg.seed).points
    if init is None:
        scale = estimate_scale(mesh, target, samples)
        center_t = pts.mean(axis=0)
        center_m = samples.mean(axis=0) * scale
        starts = [(r0, center_t - r0 @ center_m) for r0 in start_rotations(cfg.rotation_starts)]
    else:
        scale = init.scale
        starts = [(init.matrix, np.asarray(init.translation))]
    model = samples * scale
    tree = cKDTree(model)
    cutoff = cfg.correspondence_cutoff or default_cutoff(pts)
    cutoff0 = max(cutoff, robust_extent(pts, START_CUTOFF_QUANTILE)[0])

    def run(start):
        return _run_icp(tree, model, pts, start[0], start[1], cutoff0, cutoff, cfg)

    if cfg.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(s) for s in starts]

    done = [(k, r) for k, r in enumerate(runs) if r is not None]
    if not done:
        raise RegistrationFailedError(
            "no correspondences within the cutoff from any start",
            {"starts": len(starts), "cutoff": cutoff, "scale": scale, "target_points": len(pts)},
        )
    # lowest RMS, ties to the lowest start index
    best_k, best = min(done, key=lambda kr: (kr[1][2], kr[0]))
    r, t, rms, iters, hist, c = best
    return RegistrationResult(
        pose=SimilarityTransform.from_parts(r, t, scale),
        rms=rms,
        iterations_used=iters,
        start_index=best_k,
        cutoff=c,
        rms_history=hist,
        start_rms=tuple(float("inf") if x is None else x[2] for x in runs),
        start_poses=tuple(
            None if x is None else SimilarityTransform.from_parts(x[0], x[1], scale) for x in runs
        ),
    )


def pose_rms(mesh: TriangleMesh, target: PointCloud, pose: SimilarityTransform, cfg: IcpConfig = IcpConfig()) -> float:
    """The registration RMS of an arbitrary pose, recomputed from scratch."""
    samples = sample_surface(mesh, cfg.surface_samples, cfg.seed).points * pose.scale
    pts = target.points
    cutoff = cfg.correspondence_cutoff or default_cutoff(pts)
    local = (pts - np.asarray(pose.translation)) @ pose.matrix
    return truncated_rms(cKDTree(samples), local, cutoff)[0]


# ---------------------------------------------------------------------------
# Visible-surface refinement


def visible_points(
    mesh: TriangleMesh,
    pose: SimilarityTransform,
    K: Intrinsics,
    world_from_camera: RigidTransform,
    observed_depth: np.ndarray | None = None,
    observed_tolerance: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Mesh-frame points (and unit face normals) of the posed mesh as the camera sees it.

    The posed mesh is rendered and every covered pixel is unprojected and
    mapped back into the mesh frame, so the points share the pixel sampling
    of an observed cloud. Pixels where the observation holds something
    nearer (an occluder) are dropped.
    """
    from .renderer import RenderItem, RenderSettings, rasterize

    camera_from_world = world_from_camera.inverse()
    out = rasterize([RenderItem(mesh, pose, 1)], K, camera_from_world, RenderSettings.for_intrinsics(K))
    depth = out.depth
    keep = depth > 0
    if observed_depth is not None:
        obs = np.asarray(observed_depth, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            occluded = np.isfinite(obs) & (obs > 0) & (obs < depth - observed_tolerance)
        keep &= ~occluded
    rows, cols = np.nonzero(keep)
    d = depth[rows, cols]
    cam = np.column_stack([(cols + 0.5 - K.cx) / K.fx * d, (rows + 0.5 - K.cy) / K.fy * d, d])
    points = pose.inverse().apply(world_from_camera.apply(cam))
    v = mesh.vertices[mesh.triangles[out.faces[rows, cols]]]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return points, n


def _point_rows(y, p, center, weight=1.0):
    """Point-to-point rows of the linearized similarity update."""
    b = y - center
    rows, rhs = [], []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        # d/dw of (w x b)_k is (b x e_k) = -(e_k x b)
        rows.append(np.column_stack([b[:, k], -np.cross(e, b), np.broadcast_to(e, (len(b), 3))]))
        rhs.append(p[:, k] - y[:, k])
    return weight * np.concatenate(rows), weight * np.concatenate(rhs)


def _plane_rows(y, p, normals, center):
    a = y - center
    rows = np.column_stack([np.einsum("ij,ij->i", normals, a), np.cross(a, normals), normals])
    return rows, -np.einsum("ij,ij->i", normals, y - p)


def _similarity_step(blocks):
    """Least-squares (sigma, w, delta) for y -> (1 + sigma)(I + [w]x)(y - c) + c + delta."""
    A = np.concatenate([b[0] for b in blocks])
    r = np.concatenate([b[1] for b in blocks])
    x, *_ = np.linalg.lstsq(A, r, rcond=None)
    return x[0], x[1:4], x[4:7]


def _axis_angle_matrix(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        return np.eye(3)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def refine_visible(
    mesh: TriangleMesh,
    target: PointCloud,
    initial: SimilarityTransform,
    K: Intrinsics,
    world_from_camera: RigidTransform,
    observed_depth: np.ndarray | None = None,
    cfg: IcpConfig = IcpConfig(),
    rounds: int = 100,
    inner_iterations: int = 3,
    observed_tolerance: float = 0.01,
    tolerance: float = 1e-7,
    point_weight: float = 1.0,
) -> SimilarityTransform:
    """Jointly refine scale and pose against the camera-visible part of the mesh.

    Each round re-renders the posed mesh (see ``visible_points``) and takes
    Gauss-Newton steps on two residual sets: target point to the tangent
    plane of its nearest visible model point, and visible model point to its
    nearest target point. The second set penalizes model surface sticking
    out past the observed silhouette. Both clouds share the pixel grid, so a
    correct pose and scale is an exact fixed point on noise-free depth.
    """
    pts = target.points
    target_tree = cKDTree(pts)
    cutoff = cfg.correspondence_cutoff or default_cutoff(pts)
    center = pts.mean(axis=0)

    r, t, s = initial.matrix, np.asarray(initial.translation, dtype=np.float64), initial.scale
    for _ in range(rounds):
        model, normals = visible_points(
            mesh, SimilarityTransform.from_parts(r, t, s), K, world_from_camera, observed_depth, observed_tolerance
        )
        if len(model) < 10:
            break
        model_tree = cKDTree(model)
        moved = 0.0  # largest step this round
        for _ in range(inner_iterations):
            local = ((pts - t) @ r) / s
            d1, j1 = model_tree.query(local, distance_upper_bound=cutoff / s)
            ok1 = np.isfinite(d1)
            world_model = s * model @ r.T + t
            d2, j2 = target_tree.query(world_model, distance_upper_bound=cutoff)
            ok2 = np.isfinite(d2)
            if ok1.sum() + ok2.sum() < 10:
                break
            y1 = world_model[j1[ok1]]
            sigma, w, delta = _similarity_step(
                [
                    _plane_rows(y1, pts[ok1], normals[j1[ok1]] @ r.T, center),
                    _point_rows(y1, pts[ok1], center, point_weight),
                    _point_rows(world_model[ok2], pts[j2[ok2]], center),
                ]
            )
            dr = _axis_angle_matrix(w)
            r = dr @ r
            s = s * (1 + sigma)
            t = (1 + sigma) * dr @ (t - center) + center + delta
            moved = max(moved, abs(sigma), float(np.linalg.norm(w)), float(np.linalg.norm(delta)))
            if max(abs(sigma), np.linalg.norm(w), np.linalg.norm(delta)) < tolerance:
                break
        if moved < tolerance:
            break
    return SimilarityTransform.from_parts(r, t, s)
