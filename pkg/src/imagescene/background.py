"""Background geometry: grid meshing, hole completion behind objects, background depth.

The observed background cloud is an organized single-view grid, so it is
meshed directly by connecting neighbouring pixels. Pixels hidden behind
objects are filled by casting each pixel's ray against the supported plane,
falling back to the scene bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .geometry import Aabb, Intrinsics, Plane, RigidTransform
from .mesh import TriangleMesh
from .unprojection import PointCloud

# provenance codes carried in PointCloud.labels for completed points
FROM_PLANE = 1
FROM_AABB = 2


@dataclass(frozen=True)
class BackgroundBuildConfig:
    discontinuity_ratio: float = 5.0
    use_plane_primitive: bool = False
    aabb_inflation: float = 0.05
    near_clip: float = 0.01
    far_clip: float = 100.0
    projective_uv: bool = False  # texture with the background image instead of vertex colors

    def __post_init__(self):
        if not self.discontinuity_ratio > 1:
            raise ConfigurationError("discontinuity_ratio must be > 1")
        if not 0 <= self.near_clip < self.far_clip:
            raise ConfigurationError("need 0 <= near_clip < far_clip")
        if self.aabb_inflation < 0:
            raise ConfigurationError("aabb_inflation must be >= 0")


def mesh_from_depth_grid(
    cloud: PointCloud,
    K: Intrinsics,
    cfg: BackgroundBuildConfig = BackgroundBuildConfig(),
    image: np.ndarray | None = None,
    world_from_camera: RigidTransform | None = None,
) -> TriangleMesh:
    """Triangulate a camera-frame cloud with pixel provenance.

    Each 2x2 block of pixels whose four corners are present gives two
    triangles, wound to face the camera. A triangle is dropped when any edge
    is longer than ``discontinuity_ratio`` times the pixel footprint at its
    mean depth (z / fx), which keeps foreground and background unbridged.
    Vertex colors come from ``image`` (uint8 RGB) when given. The mesh is
    returned in world coordinates if ``world_from_camera`` is given.
    """
    if len(cloud) == 0:
        raise DegenerateInputError("cannot mesh an empty cloud")
    if cloud.pixels is None:
        raise DegenerateInputError("meshing needs per-point pixel provenance")
    H, W = K.shape
    cols, rows = cloud.pixels[:, 0], cloud.pixels[:, 1]
    if cols.min() < 0 or rows.min() < 0 or cols.max() >= W or rows.max() >= H:
        raise ConfigurationError("point provenance lies outside the image")

    index = np.full((H, W), -1, dtype=np.int64)
    # first occurrence wins for duplicated pixels
    order = np.arange(len(cloud))[::-1]
    index[rows[order], cols[order]] = order

    p00, p01 = index[:-1, :-1], index[:-1, 1:]
    p10, p11 = index[1:, :-1], index[1:, 1:]
    full = (p00 >= 0) & (p01 >= 0) & (p10 >= 0) & (p11 >= 0)
    a, b, c, d = p00[full], p01[full], p10[full], p11[full]
    tris = np.concatenate([np.column_stack([a, c, b]), np.column_stack([c, d, b])])

    pts = cloud.points
    corners = pts[tris]
    edges = np.stack(
        [
            np.linalg.norm(corners[:, 1] - corners[:, 0], axis=1),
            np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1),
            np.linalg.norm(corners[:, 0] - corners[:, 2], axis=1),
        ],
        axis=1,
    )
    footprint = corners[:, :, 2].mean(axis=1) / K.fx
    tris = tris[(edges <= cfg.discontinuity_ratio * footprint[:, None]).all(axis=1)]

    # keep row-major triangle order: sort by the quad's top-left pixel, then by half
    if len(tris):
        key = rows[tris[:, 0]] * W + cols[tris[:, 0]]
        tris = tris[np.lexsort((np.arange(len(tris)), key))]

    colors = uv = texture = None
    if image is not None:
        img = np.asarray(image)
        if img.shape[:2] != (H, W):
            raise ConfigurationError("image and intrinsics disagree on size")
        if cfg.projective_uv:
            uv = np.column_stack([(cols + 0.5) / W, 1.0 - (rows + 0.5) / H])
            texture = img[..., :3].astype(np.uint8)
        colors = img[rows, cols, :3].astype(np.float64) / 255.0
    vertices = pts if world_from_camera is None else world_from_camera.apply(pts)
    return TriangleMesh(vertices, tris, colors=colors, uv=uv, texture=texture)


def _ray_aabb(origin: np.ndarray, dirs: np.ndarray, box: Aabb, near: float):
    """Nearest slab-test hit with parameter >= near; returns (t, face axis, face value, hit mask)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box.min - origin) * inv
        t1 = (box.max - origin) * inv
    t_lo = np.where(dirs != 0, np.minimum(t0, t1), -np.inf)
    t_hi = np.where(dirs != 0, np.maximum(t0, t1), np.inf)
    # a ray parallel to a slab only hits if the origin lies inside it
    inside = (origin >= box.min) & (origin <= box.max)
    t_hi = np.where((dirs == 0) & ~inside, -np.inf, t_hi)
    enter_axis = np.argmax(t_lo, axis=1)
    exit_axis = np.argmin(t_hi, axis=1)
    t_enter = t_lo.max(axis=1)
    t_exit = t_hi.min(axis=1)
    hit = t_enter <= t_exit
    use_enter = t_enter >= near
    t = np.where(use_enter, t_enter, t_exit)
    axis = np.where(use_enter, enter_axis, exit_axis)
    hit &= np.isfinite(t) & (t >= near)
    # face coordinate: which side of the slab the chosen crossing is on
    n = len(dirs)
    dsign = dirs[np.arange(n), axis]
    entering = use_enter
    low_face = (dsign > 0) == entering
    face = np.where(low_face, box.min[axis], box.max[axis])
    return t, axis, face, hit


def complete_holes(
    mask: np.ndarray,
    K: Intrinsics,
    plane: Plane,
    scene_aabb: Aabb,
    camera_pose: RigidTransform,
    cfg: BackgroundBuildConfig = BackgroundBuildConfig(),
) -> PointCloud:
    """World-frame background points for every object pixel (label > 0).

    Each pixel's ray x(t) = o + t * R K^-1 [u, v, 1] is parameterized so that
    t is the camera-space depth. The plane hit is used when t lies in
    [near_clip, far_clip]; otherwise the nearest hit on ``scene_aabb`` with
    t >= near_clip. Pixels that miss both are omitted. Labels record the
    source: FROM_PLANE or FROM_AABB.
    """
    mask = np.asarray(mask)
    if mask.shape != K.shape:
        raise ConfigurationError(f"mask shape {mask.shape} does not match intrinsics {K.shape}")
    rows, cols = np.nonzero(mask > 0)
    if len(rows) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
    cam_dirs = np.column_stack([(cols + 0.5 - K.cx) / K.fx, (rows + 0.5 - K.cy) / K.fy, np.ones(len(rows))])
    dirs = cam_dirs @ camera_pose.matrix.T
    origin = np.asarray(camera_pose.translation, dtype=np.float64)

    denom = dirs @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (plane.offset - plane.normal @ origin) / denom
    on_plane = (denom != 0) & np.isfinite(t_plane) & (t_plane >= cfg.near_clip) & (t_plane <= cfg.far_clip)

    t_box, axis, face, on_box = _ray_aabb(origin, dirs, scene_aabb, cfg.near_clip)
    on_box &= ~on_plane

    points = np.zeros((len(rows), 3))
    points[on_plane] = origin + t_plane[on_plane, None] * dirs[on_plane]
    points[on_box] = origin + t_box[on_box, None] * dirs[on_box]
    # snap the crossing coordinate onto the face exactly
    idx = np.nonzero(on_box)[0]
    points[idx, axis[idx]] = face[idx]

    keep = on_plane | on_box
    source = np.where(on_plane, FROM_PLANE, FROM_AABB)
    return PointCloud(points[keep], np.column_stack([cols, rows])[keep], source[keep])


def build_background(
    background_cloud: PointCloud,
    mask: np.ndarray,
    K: Intrinsics,
    plane: Plane,
    scene_aabb: Aabb,
    world_from_camera: RigidTransform,
    image: np.ndarray | None = None,
    cfg: BackgroundBuildConfig = BackgroundBuildConfig(),
) -> tuple[TriangleMesh, PointCloud]:
    """World-frame background mesh over observed plus completed pixels.

    ``background_cloud`` is in the camera frame. Returns the mesh and the
    completed (world-frame) cloud.
    """
    completed = complete_holes(mask, K, plane, scene_aabb.inflated(cfg.aabb_inflation), world_from_camera, cfg)
    completed_cam = completed.transformed(world_from_camera.inverse())
    merged = PointCloud.concatenate(
        [PointCloud(background_cloud.points, background_cloud.pixels), PointCloud(completed_cam.points, completed_cam.pixels)]
    )
    mesh = mesh_from_depth_grid(merged, K, cfg, image, world_from_camera)
    return mesh, completed


def background_depth(scene, K: Intrinsics | None = None) -> np.ndarray:
    """Camera-space depth of the scene's background alone; 0 where nothing is hit."""
    from .renderer import RenderSettings, rasterize, scene_items

    if not scene.has_background_geometry():
        raise ConfigurationError("scene has no background geometry (mesh or plane primitive)")
    K = scene.intrinsics if K is None else K
    items, plane = scene_items(scene, include_objects=False, include_background=True)
    out = rasterize(items, K, scene.camera_from_world, RenderSettings.for_intrinsics(K), plane)
    return out.depth
