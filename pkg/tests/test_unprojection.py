import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagescene.errors import BehindCameraError, ConfigurationError, PreconditionError
from imagescene.geometry import Intrinsics
from imagescene.unprojection import PointCloud, partition, project, unproject

K = Intrinsics(500.0, 500.0, 250.0, 250.0, 1000, 500)


def test_principal_point_pixel_maps_to_optical_axis():
    # principal point on a pixel center: cx = 10.5 -> column 10
    k = Intrinsics(400.0, 300.0, 10.5, 7.5, 21, 15)
    depth = np.zeros((15, 21))
    depth[7, 10] = 2.0
    cloud = unproject(depth, k)
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 2.0]], atol=1e-15)
    np.testing.assert_array_equal(cloud.pixels, [[10, 7]])


def test_matches_scalar_formula():
    depth = np.zeros((500, 1000))
    depth[250, 750] = 1.0
    cloud = unproject(depth, K)
    u, v = 750 + 0.5, 250 + 0.5
    expected = [(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0]
    np.testing.assert_allclose(cloud.points[0], expected, rtol=0, atol=1e-15)


def test_every_point_matches_scalar_loop(rng):
    k = Intrinsics(61.0, 57.0, 9.3, 6.1, 17, 12)
    depth = rng.uniform(0.2, 3.0, size=(12, 17))
    depth[rng.random(depth.shape) < 0.2] = 0.0
    depth[0, 0] = np.nan
    cloud = unproject(depth, k)
    expected = []
    for r in range(12):
        for c in range(17):
            d = depth[r, c]
            if np.isfinite(d) and d > 0:
                expected.append(((c + 0.5 - k.cx) / k.fx * d, (r + 0.5 - k.cy) / k.fy * d, d))
    np.testing.assert_allclose(cloud.points, np.array(expected), atol=1e-14)


def test_all_invalid_depth_is_empty():
    depth = np.zeros((500, 1000))
    depth[0, :3] = [np.nan, -1.0, np.inf]
    assert len(unproject(depth, K)) == 0


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        unproject(np.ones((10, 10)), K)


def test_project_examples():
    k = Intrinsics(600, 600, 320, 240, 640, 480)
    np.testing.assert_allclose(project([0, 0, 1], k), [320, 240, 1])
    with pytest.raises(BehindCameraError):
        project([0, 0, 0], k)
    with pytest.raises(BehindCameraError):
        project([[0, 0, 1], [1, 1, -1]], k)


@given(st.integers(0, 999), st.integers(0, 499), st.floats(0.05, 50.0))
def test_project_inverts_unproject(col, row, d):
    depth = np.zeros((500, 1000))
    depth[row, col] = d
    uvd = project(unproject(depth, K).points[0], K)
    np.testing.assert_allclose(uvd, [col + 0.5, row + 0.5, d], rtol=0, atol=1e-6)


def test_partition_uniform_background():
    depth = np.ones((500, 1000))
    bg, objs = partition(unproject(depth, K), np.zeros((500, 1000), int))
    assert len(bg) == 500 * 1000 and objs == {}


def test_partition_checkerboard_counts(rng):
    k = Intrinsics(50, 50, 20, 15, 40, 30)
    depth = rng.uniform(0.5, 2, size=(30, 40))
    depth[rng.random(depth.shape) < 0.3] = 0
    rows, cols = np.indices(depth.shape)
    mask = (rows + cols) % 2
    bg, objs = partition(unproject(depth, k), mask)
    valid = depth > 0
    assert len(bg) == int((valid & (mask == 0)).sum())
    assert len(objs[1]) == int((valid & (mask == 1)).sum())
    assert np.all(bg.labels == 0) and np.all(objs[1].labels == 1)


def test_partition_key_set():
    k = Intrinsics(50, 50, 5, 5, 10, 10)
    mask = np.zeros((10, 10), int)
    mask[:3] = 1
    mask[7:] = 2
    _, objs = partition(unproject(np.ones((10, 10)), k), mask)
    assert set(objs) == {1, 2}


def test_partition_requires_provenance():
    with pytest.raises(PreconditionError):
        partition(PointCloud(np.zeros((4, 3))), np.zeros((2, 2), int))
