import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagescene.errors import NoPlacementError
from imagescene.geometry import Aabb, RigidTransform, rot_z
from imagescene.placement import (
    PRESET_PROFILES,
    PlacementCandidate,
    RobotProfile,
    load_profile,
    placement_from_camera,
    sample_placements,
    verify_placement,
)

ARM = RobotProfile("test-arm", 0.25, 0.85, 0.3, 0.1)
CUBE = Aabb([-0.05, -0.05, 0.0], [0.05, 0.05, 0.1])


def at(x, y, yaw=0.0):
    return PlacementCandidate(RigidTransform.from_matrix(rot_z(yaw), [x, y, 0.0]), 0.0)


def test_cube_coverage_by_direct_distances():
    base = np.array([0.5, 0.0, 0.0])
    shoulder = base + [0, 0, ARM.mount_height]
    dists = [np.linalg.norm(shoulder - c) for c in CUBE.corners()]
    assert 0.25 <= min(dists) and max(dists) <= 0.85
    check = verify_placement(at(0.5, 0.0), [CUBE], None, ARM)
    assert check.ok
    assert check.margins["reach_max"] == pytest.approx(0.85 - max(dists), abs=1e-12)


def test_spread_objects_are_infeasible():
    far_apart = [CUBE, Aabb(CUBE.min + [3, 0, 0], CUBE.max + [3, 0, 0])]
    with pytest.raises(NoPlacementError) as info:
        sample_placements(far_apart, None, ARM, n_samples=256)
    assert info.value.violated == "reach_max"
    assert info.value.margin < 0


def test_base_inside_scene_box_rejected():
    table = Aabb([-0.6, -0.4, -0.02], [0.6, 0.4, 0.0])
    check = verify_placement(at(0.3, 0.2), [CUBE], table, ARM)
    assert not check.ok and check.margins["scene_collision"] < 0


def test_emitted_candidates_verify_and_are_sorted():
    table = Aabb([-0.3, -0.3, -0.01], [0.3, 0.3, 0.0])
    objs = [CUBE, Aabb([0.1, 0.1, 0], [0.15, 0.2, 0.08])]
    cands = sample_placements(objs, table, ARM, n_samples=512, seed=3)
    assert cands
    for c in cands:
        assert verify_placement(c, objs, table, ARM).ok
        assert c.base_pose.translation[2] == 0.0
    clearances = [c.clearance for c in cands]
    assert clearances == sorted(clearances, reverse=True)


def test_nudge_past_reach_fails():
    cands = sample_placements([CUBE], None, ARM, n_samples=512, seed=1)
    # pick the candidate closest to the reach limit and push it outward
    c = min(cands, key=lambda c: c.margins["reach_max"])
    p = np.asarray(c.base_pose.translation)
    shoulder = p + [0, 0, ARM.mount_height]
    far_corner = max(CUBE.corners(), key=lambda x: np.linalg.norm(shoulder - x))
    away = shoulder - far_corner
    # move along the ground so the farthest-corner distance grows past r_max by 1 mm
    direction = np.append(away[:2] / np.linalg.norm(away[:2]), 0.0)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d = max(np.linalg.norm(shoulder + mid * direction - x) for x in CUBE.corners())
        lo, hi = (mid, hi) if d < ARM.r_max + 1e-3 else (lo, mid)
    moved = at(*(p + hi * direction)[:2])
    check = verify_placement(moved, [CUBE], None, ARM)
    assert not check.ok
    assert check.margins["reach_max"] == pytest.approx(-1e-3, abs=1e-9)


def test_empty_object_list_only_checks_collision():
    table = Aabb([-0.5, -0.5, -0.1], [0.5, 0.5, 0.0])
    assert verify_placement(at(2.0, 0.0), [], table, ARM).ok
    assert not verify_placement(at(0.0, 0.0), [], table, ARM).ok


def test_deterministic_given_seed():
    a = sample_placements([CUBE], None, ARM, n_samples=64, seed=9)
    b = sample_placements([CUBE], None, ARM, n_samples=64, seed=9)
    assert [c.to_dict() for c in a] == [c.to_dict() for c in b]


@settings(max_examples=30)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.02, 0.3), st.integers(0, 2**16))
def test_sampled_candidates_always_verify(x, y, size, seed):
    box = Aabb([x, y, 0.0], [x + size, y + size / 2, size])
    try:
        cands = sample_placements([box], None, ARM, n_samples=64, seed=seed)
    except NoPlacementError:
        return
    assert all(verify_placement(c, [box], None, ARM).ok for c in cands)


def test_presets_load():
    for name in PRESET_PROFILES:
        p = load_profile(name)
        assert p.name == name and p.r_min < p.r_max
    assert RobotProfile.from_dict(ARM.to_dict()) == ARM


def test_camera_to_robot_mode():
    wfc = RigidTransform.from_matrix(rot_z(0.3), [1, 2, 0.5])
    robot_from_camera = RigidTransform.from_matrix(rot_z(-0.1), [0.2, 0, 0.1])
    c = placement_from_camera(wfc, robot_from_camera)
    # camera origin, seen from the robot base, is where robot_from_camera puts it
    cam_in_base = c.base_pose.inverse().apply(wfc.apply(np.zeros(3)))
    np.testing.assert_allclose(cam_in_base, robot_from_camera.apply(np.zeros(3)), atol=1e-12)
