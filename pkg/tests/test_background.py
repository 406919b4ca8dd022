import numpy as np
import pytest

from imagescene.background import (
    FROM_AABB,
    FROM_PLANE,
    BackgroundBuildConfig,
    background_depth,
    complete_holes,
    mesh_from_depth_grid,
)
from imagescene.errors import ConfigurationError, DegenerateInputError
from imagescene.geometry import Aabb, Intrinsics, Plane, RigidTransform
from imagescene.scene import Background, SceneConfig
from imagescene.unprojection import PointCloud, unproject

K = Intrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)
UP = Plane([0, 0, 1], 0.0)


def down_camera(height):
    r = np.column_stack([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    return RigidTransform.from_matrix(r, [0, 0, height])


def test_constant_plane_triangle_count():
    mesh = mesh_from_depth_grid(unproject(np.full((24, 32), 1.5), K), K)
    assert len(mesh.triangles) == (32 - 1) * (24 - 1) * 2
    edges = np.concatenate([mesh.vertices[mesh.triangles[:, a]] - mesh.vertices[mesh.triangles[:, b]] for a, b in ((0, 1), (1, 2), (2, 0))])
    assert np.linalg.norm(edges, axis=1).max() < 5.0 * 1.5 / K.fx


def test_no_triangle_spans_depth_seam():
    depth = np.full((24, 32), 0.5)
    depth[:, 16:] = 5.0
    mesh = mesh_from_depth_grid(unproject(depth, K), K)
    z = mesh.vertices[mesh.triangles][:, :, 2]
    assert np.all((z.max(axis=1) <= 0.5) | (z.min(axis=1) >= 5.0))
    # both halves are still meshed: 15 and 15 columns of quads
    assert len(mesh.triangles) == 2 * 23 * (15 + 15)


def test_interior_quads_become_two_triangles(rng):
    depth = np.full((24, 32), 2.0)
    depth[rng.random(depth.shape) < 0.1] = 0
    valid = depth > 0
    quads = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]
    mesh = mesh_from_depth_grid(unproject(depth, K), K)
    assert len(mesh.triangles) >= 2 * quads.sum()


def test_single_pixel_gives_empty_mesh():
    depth = np.zeros((24, 32))
    depth[3, 4] = 1.0
    assert len(mesh_from_depth_grid(unproject(depth, K), K).triangles) == 0


def test_triangles_face_the_camera():
    mesh = mesh_from_depth_grid(unproject(np.full((24, 32), 1.0), K), K)
    v = mesh.vertices[mesh.triangles]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    assert np.all(n[:, 2] < 0)


def test_center_ray_hits_origin():
    k = Intrinsics(50.0, 50.0, 5.5, 5.5, 11, 11)
    mask = np.zeros((11, 11), int)
    mask[5, 5] = 1
    pts = complete_holes(mask, k, UP, Aabb([-1, -1, -1], [1, 1, 1]), down_camera(1.0))
    np.testing.assert_allclose(pts.points, [[0, 0, 0]], atol=1e-15)
    assert pts.labels.tolist() == [FROM_PLANE]


def test_grazing_rays_fall_back_to_box():
    # camera on the plane, looking along +X: rows above the horizon never hit z = 0 ahead
    r = np.column_stack([[0, -1.0, 0], [0, 0, -1.0], [1.0, 0, 0]])
    cam = RigidTransform.from_matrix(r, [0, 0, 0.5])
    mask = np.ones((24, 32), int)
    box = Aabb([-3, -3, 0], [3, 3, 2])
    pts = complete_holes(mask, K, UP, box, cam)
    on_box = pts.labels == FROM_AABB
    assert on_box.any() and (pts.labels == FROM_PLANE).any()
    p = pts.points[on_box]
    on_face = np.isclose(p, box.min, atol=0, rtol=0) | np.isclose(p, box.max, atol=0, rtol=0)
    assert np.all(on_face.any(axis=1))
    assert np.all(np.abs(pts.points[~on_box] @ UP.normal - UP.offset) < 1e-9)


def test_completion_matches_plane_render():
    cam = down_camera(1.2)
    scene = SceneConfig(K, cam, background=Background(plane_primitive=True))
    expected = background_depth(scene)
    mask = np.zeros((24, 32), int)
    mask[5:15, 8:20] = 1
    pts = complete_holes(mask, K, UP, Aabb([-5, -5, -1], [5, 5, 1]), cam)
    depth = cam.inverse().apply(pts.points)[:, 2]
    cols, rows = pts.pixels.T
    np.testing.assert_allclose(depth, expected[rows, cols], atol=1e-6)
    np.testing.assert_allclose(expected, 1.2, atol=1e-9)


def test_background_depth_needs_geometry():
    with pytest.raises(ConfigurationError):
        background_depth(SceneConfig(K, down_camera(1.0)))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        BackgroundBuildConfig(discontinuity_ratio=0)
    with pytest.raises(DegenerateInputError):
        mesh_from_depth_grid(PointCloud(np.zeros((0, 3))), K)
