import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagescene.errors import DegenerateInputError, LowConfidenceError
from imagescene.geometry import Plane, quat_to_matrix
from imagescene.gravity import RansacConfig, align_scene, fit_plane_ransac, ransac_plane, rodrigues_matrix_to_z, rodrigues_to_z
from imagescene.synth import look_at
from imagescene.unprojection import PointCloud

Z = np.array([0.0, 0.0, 1.0])


def axis_angle_oracle(n):
    """Textbook form with an explicit angle: I + sin t [k]x + (1 - cos t) [k]x^2."""
    n = np.asarray(n, float) / np.linalg.norm(n)
    axis = np.cross(n, Z)
    k = axis / np.linalg.norm(axis)
    theta = np.arccos(np.clip(n @ Z, -1, 1))
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


def test_identity_for_up_normal():
    np.testing.assert_allclose(rodrigues_to_z([0, 0, 1]), [1, 0, 0, 0], atol=1e-15)


def test_x_normal_matches_axis_angle_oracle():
    r = rodrigues_matrix_to_z([1, 0, 0])
    np.testing.assert_allclose(r, axis_angle_oracle([1, 0, 0]), atol=1e-15)
    np.testing.assert_allclose(r @ [1, 0, 0], Z, atol=1e-15)
    # a quarter turn about -Y
    np.testing.assert_allclose(quat_to_matrix(rodrigues_to_z([1, 0, 0])), r, atol=1e-12)


def test_antipodal_is_half_turn_about_x():
    r = rodrigues_matrix_to_z([0, 0, -1])
    np.testing.assert_array_equal(r @ [0, 0, -1], Z)
    np.testing.assert_allclose(r, np.diag([1.0, -1.0, -1.0]), atol=0)


def test_matches_oracle_on_random_normals(rng):
    n = rng.normal(size=(500, 3))
    r = rodrigues_matrix_to_z(n)
    for ni, ri in zip(n, r):
        np.testing.assert_allclose(ri, axis_angle_oracle(ni), atol=1e-9)


@given(st.floats(-np.pi, np.pi), st.floats(-12, -1))
def test_near_antipodal_stays_exact(phi, log_eps):
    eps = 10.0**log_eps
    n = np.array([eps * np.cos(phi), eps * np.sin(phi), -1.0])
    n /= np.linalg.norm(n)
    r = rodrigues_matrix_to_z(n)
    np.testing.assert_allclose(r @ n, Z, atol=1e-9)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(r) - 1) < 1e-9


def test_ransac_exact_plane(rng):
    pts = np.column_stack([rng.uniform(-1, 1, (1000, 2)), np.full(1000, 1.3)])
    plane, inliers = fit_plane_ransac(pts, RansacConfig())
    assert abs(abs(plane.normal[2]) - 1) < 1e-12
    assert abs(abs(plane.offset) - 1.3) < 1e-12
    assert inliers.sum() == 1000


def test_ransac_three_points_is_unique_plane(rng):
    pts = rng.normal(size=(3, 3))
    plane = ransac_plane(pts, RansacConfig(iterations=10))
    np.testing.assert_allclose(plane.signed_distance(pts), 0, atol=1e-12)
    expected = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    expected /= np.linalg.norm(expected)
    assert abs(abs(plane.normal @ expected) - 1) < 1e-12


def test_ransac_errors(rng):
    with pytest.raises(DegenerateInputError):
        ransac_plane(np.zeros((2, 3)), RansacConfig())
    line = np.outer(np.linspace(0, 1, 50), [1, 2, 3])
    with pytest.raises(DegenerateInputError):
        ransac_plane(line, RansacConfig())
    blob = rng.normal(size=(500, 3))
    with pytest.raises(LowConfidenceError) as info:
        ransac_plane(blob, RansacConfig(inlier_distance=1e-4, min_inlier_fraction=0.5))
    assert isinstance(info.value.plane, Plane)


def test_ransac_is_seed_deterministic(rng):
    pts = np.column_stack([rng.uniform(-1, 1, (300, 2)), rng.normal(0, 0.002, 300)])
    pts = np.vstack([pts, rng.uniform(-1, 1, (100, 3))])
    a = fit_plane_ransac(pts, RansacConfig(seed=4))
    b = fit_plane_ransac(pts, RansacConfig(seed=4))
    np.testing.assert_array_equal(a[0].normal, b[0].normal)
    np.testing.assert_array_equal(a[1], b[1])


def _plane_scene(rng, world_from_camera):
    table = np.column_stack([rng.uniform(-0.6, 0.6, (3000, 2)), np.zeros(3000)])
    block = rng.uniform([-0.1, -0.1, 0.02], [0.1, 0.1, 0.2], (600, 3))
    cam_from_world = world_from_camera.inverse()
    return cam_from_world.apply(table), cam_from_world.apply(block)


def test_downward_camera_recovers_z_zero(rng):
    # 30 degrees below horizontal
    eye = np.array([0.0, -1.0, np.tan(np.radians(30))])
    wfc = look_at(eye, [0, 0, 0])
    table, block = _plane_scene(rng, wfc)
    cloud = PointCloud(np.vstack([table, block]))
    res = align_scene(cloud, PointCloud(table), None, RansacConfig(inlier_distance=0.002))
    world_table = res.world_from_camera.apply(table)
    assert np.max(np.abs(world_table[:, 2])) < 1e-6
    assert np.all(res.world_from_camera.apply(block)[:, 2] > 0.0199)


def test_aligned_cloud_is_fixed_point(rng):
    table = np.column_stack([rng.uniform(-1, 1, (2000, 2)), np.zeros(2000)])
    table -= [table[:, 0].mean(), table[:, 1].mean(), 0]
    block = np.column_stack([rng.uniform(-0.1, 0.1, (200, 2)), rng.uniform(0.05, 0.2, 200)])
    block[:, :2] -= block[:, :2].mean(axis=0)
    res = align_scene(PointCloud(np.vstack([table, block])), PointCloud(table), None, RansacConfig())
    np.testing.assert_allclose(res.world_from_camera.as_homogeneous()[:3, :3], np.eye(3), atol=1e-9)


def test_majority_side_becomes_up(rng):
    table = np.column_stack([rng.uniform(-1, 1, (2000, 2)), np.zeros(2000)])
    below = np.column_stack([rng.uniform(-0.1, 0.1, (300, 2)), rng.uniform(-0.3, -0.05, 300)])
    res = align_scene(PointCloud(np.vstack([table, below])), PointCloud(table), None, RansacConfig())
    assert np.all(res.world_from_camera.apply(below)[:, 2] > 0)
