"""Robot base placement on the support plane.

The robot's reach is modelled as a spherical shell [r_min, r_max] around
its shoulder, which sits ``mount_height`` above the base. A base position
on z = 0 is acceptable when the shell contains every object bounding box
and the base neither collides with the scene box nor stands inside an
object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, NoPlacementError
from .geometry import Aabb, RigidTransform, rot_z

DEFAULT_MARGIN = 0.05
PRESET_PROFILES = ("tabletop-arm-7dof", "humanoid")


@dataclass(frozen=True)
class RobotProfile:
    name: str
    r_min: float
    r_max: float
    mount_height: float
    base_radius: float

    def __post_init__(self):
        if not 0 <= self.r_min < self.r_max:
            raise ConfigurationError("need 0 <= r_min < r_max")
        if not self.base_radius > 0:
            raise ConfigurationError("base_radius must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "mount_height": self.mount_height,
            "base_radius": self.base_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RobotProfile:
        try:
            return cls(
                str(d["name"]), float(d["r_min"]), float(d["r_max"]), float(d["mount_height"]), float(d["base_radius"])
            )
        except KeyError as exc:
            raise ConfigurationError(f"robot profile is missing {exc}") from exc


def load_profile(name_or_path) -> RobotProfile:
    """A shipped preset by name, or a profile JSON file."""
    if isinstance(name_or_path, RobotProfile):
        return name_or_path
    if str(name_or_path) in PRESET_PROFILES:
        text = resources.files("imagescene").joinpath(f"data/robots/{name_or_path}.json").read_text(encoding="utf-8")
        return RobotProfile.from_dict(json.loads(text))
    path = Path(name_or_path)
    if not path.exists():
        raise InputError(f"robot profile not found: {name_or_path} (presets: {', '.join(PRESET_PROFILES)})")
    return RobotProfile.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class PlacementCandidate:
    base_pose: RigidTransform
    clearance: float
    margins: dict = field(default_factory=dict, compare=False)

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.base_pose.translation)

    def to_dict(self, profile: RobotProfile | None = None) -> dict:
        d = {"base_pose": self.base_pose.to_dict(), "clearance": float(self.clearance)}
        if profile is not None:
            d["profile"] = profile.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PlacementCandidate:
        return cls(RigidTransform.from_dict(d["base_pose"]), float(d.get("clearance", float("nan"))))


@dataclass(frozen=True)
class PlacementCheck:
    ok: bool
    margins: dict  # constraint -> signed margin in meters, >= 0 means satisfied

    def __bool__(self) -> bool:
        return self.ok


# ---------------------------------------------------------------------------
# Constraint margins (vectorized over bases)


def _box_arrays(aabbs):
    lo = np.array([b.min for b in aabbs]).reshape(-1, 3)
    hi = np.array([b.max for b in aabbs]).reshape(-1, 3)
    return lo, hi


def _margins(bases_xy: np.ndarray, objects, scene_aabb: Aabb | None, profile: RobotProfile, margin: float) -> dict:
    """Signed margins per constraint for each base, shape (N,) each."""
    n = len(bases_xy)
    shoulder = np.column_stack([bases_xy, np.full(n, profile.mount_height)])
    out = {}
    if objects:
        lo, hi = _box_arrays(objects)
        corners = np.stack(
            [np.where(np.array([(k >> a) & 1 for a in range(3)], bool), hi, lo) for k in range(8)], axis=1
        )  # (M, 8, 3)
        far = np.linalg.norm(shoulder[:, None, None, :] - corners[None], axis=3).max(axis=(1, 2))
        closest = np.clip(shoulder[:, None, :], lo[None], hi[None])
        near = np.linalg.norm(shoulder[:, None, :] - closest, axis=2).min(axis=1)
        out["reach_max"] = profile.r_max - far
        out["reach_min"] = near - profile.r_min
        # base point vs inflated object boxes: distance outside (negative depth inside)
        base = np.column_stack([bases_xy, np.zeros(n)])
        out["object_overlap"] = _outside_distance(base, lo - margin, hi + margin).min(axis=1)
    if scene_aabb is not None and scene_aabb.min[2] <= 0.0 <= scene_aabb.max[2]:
        lo2 = scene_aabb.min[:2] - margin
        hi2 = scene_aabb.max[:2] + margin
        d = _outside_distance(bases_xy, lo2[None], hi2[None])[:, 0]
        out["scene_collision"] = d - profile.base_radius
    return out


def _outside_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Signed distance from points (N, d) to boxes (M, d): positive outside, negative inside."""
    p = points[:, None, :]
    gap = np.maximum(lo[None] - p, p - hi[None])  # (N, M, d)
    outside = np.linalg.norm(np.maximum(gap, 0.0), axis=2)
    inside = np.minimum(gap.max(axis=2), 0.0)
    return np.where(outside > 0, outside, inside)


def _yaw_pose(base_xy: np.ndarray, target_xy: np.ndarray) -> RigidTransform:
    yaw = float(np.arctan2(target_xy[1] - base_xy[1], target_xy[0] - base_xy[0]))
    return RigidTransform.from_matrix(rot_z(yaw), [base_xy[0], base_xy[1], 0.0])


# ---------------------------------------------------------------------------


def sample_placements(
    object_aabbs,
    scene_aabb: Aabb | None,
    profile: RobotProfile,
    n_samples: int = 512,
    seed: int = 0,
    margin: float = DEFAULT_MARGIN,
) -> list[PlacementCandidate]:
    """Feasible base placements sorted by clearance, highest first.

    Bases are drawn on the annulus r in [r_min, r_max] around the objects'
    combined box center with stratified angle and radius (a Latin-hypercube
    pairing of ``n_samples`` strata each). Each base faces the center.
    The clearance of a candidate is its smallest constraint margin.
    """
    objects = list(object_aabbs)
    if not objects:
        raise ConfigurationError("placement needs at least one object box")
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    combined = objects[0]
    for b in objects[1:]:
        combined = combined.union(b)
    center = combined.center[:2]

    rng = np.random.default_rng(seed)
    strata = np.arange(n_samples)
    angle = 2 * np.pi * (strata + rng.random(n_samples)) / n_samples
    radius = profile.r_min + (profile.r_max - profile.r_min) * (rng.permutation(n_samples) + rng.random(n_samples)) / n_samples
    bases = center + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])

    margins = _margins(bases, objects, scene_aabb, profile, margin)
    names = sorted(margins)
    table = np.column_stack([margins[k] for k in names])
    clearance = table.min(axis=1)
    ok = clearance >= 0
    if not ok.any():
        best = table.max(axis=0)
        worst = int(np.argmin(best))
        raise NoPlacementError(
            f"no feasible base among {n_samples} samples; tightest constraint {names[worst]!r} "
            f"(best margin {best[worst]:.4f} m)",
            violated=names[worst],
            margin=float(best[worst]),
        )
    idx = np.nonzero(ok)[0]
    idx = idx[np.argsort(-clearance[idx], kind="stable")]
    return [
        PlacementCandidate(
            _yaw_pose(bases[i], center), float(clearance[i]), {k: float(margins[k][i]) for k in names}
        )
        for i in idx
    ]


def verify_placement(
    candidate: PlacementCandidate,
    object_aabbs,
    scene_aabb: Aabb | None,
    profile: RobotProfile,
    margin: float = DEFAULT_MARGIN,
) -> PlacementCheck:
    """Re-check one candidate from scratch with plain per-box loops."""
    base = np.asarray(candidate.base_pose.translation, dtype=np.float64)
    shoulder = base + np.array([0.0, 0.0, profile.mount_height])
    report = {"base_height": -abs(float(base[2]))}
    for box in object_aabbs:
        far = max(float(np.linalg.norm(shoulder - c)) for c in box.corners())
        near = float(np.linalg.norm(shoulder - box.closest_point(shoulder)))
        report["reach_max"] = min(report.get("reach_max", np.inf), profile.r_max - far)
        report["reach_min"] = min(report.get("reach_min", np.inf), near - profile.r_min)
        grown = box.inflated(margin)
        if grown.contains(base[None])[0]:
            depth = float(np.min(np.minimum(base - grown.min, grown.max - base)))
            report["object_overlap"] = min(report.get("object_overlap", np.inf), -depth)
        else:
            gap = float(np.linalg.norm(base - grown.closest_point(base)))
            report["object_overlap"] = min(report.get("object_overlap", np.inf), gap)
    if scene_aabb is not None and scene_aabb.min[2] <= 0.0 <= scene_aabb.max[2]:
        lo = scene_aabb.min[:2] - margin
        hi = scene_aabb.max[:2] + margin
        nearest = np.clip(base[:2], lo, hi)
        inside = bool(np.all(base[:2] >= lo) and np.all(base[:2] <= hi))
        dist = -float(np.min(np.minimum(base[:2] - lo, hi - base[:2]))) if inside else float(np.linalg.norm(base[:2] - nearest))
        report["scene_collision"] = dist - profile.base_radius
    # the base sits on the plane; tolerate round-off only
    ok = all(v >= 0 for k, v in report.items() if k != "base_height") and report["base_height"] >= -1e-9
    return PlacementCheck(ok, report)


def placement_from_camera(world_from_camera: RigidTransform, camera_to_robot: RigidTransform) -> PlacementCandidate:
    """Known robot-from-camera transform: the base pose follows directly, no sampling."""
    base = world_from_camera @ camera_to_robot.inverse()
    return PlacementCandidate(base, float("nan"), {"source": "camera_to_robot"})
