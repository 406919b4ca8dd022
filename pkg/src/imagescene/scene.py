"""Scene description and its JSON serialization.

The scene file is UTF-8 JSON with a top-level ``schema_version``. Mesh
references are paths relative to the scene file's directory. Keys are
written sorted and floats with full ``repr`` precision, so identical
scenes serialize to identical bytes.

Schema (version 1)::

    schema_version: 1
    camera:
      intrinsics: {fx, fy, cx, cy, width, height}
      world_from_camera: {rotation_wxyz, translation}
    supported_plane: {normal, offset}            # world frame, z = 0 after recovery
    objects: [{id, label, category, mesh, pose: {rotation_wxyz, translation, scale},
               properties: {...}, mass, provenance: {...}}]
    background: {mesh | null, plane_primitive, color}
    robot_placements: [{base_pose: {...}, clearance, profile}]
    camera_to_robot: {rotation_wxyz, translation} | null
    provenance: {intrinsics, camera_pose, supported_plane}
    metadata: {...}

``camera_to_robot`` is the known robot-base-from-camera transform for images
taken by a robot-mounted camera; when set, placement sampling is skipped and
the base pose is ``world_from_camera @ inverse(camera_to_robot)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AssetError, ConfigurationError, InputError
from .geometry import Intrinsics, Plane, RigidTransform, SimilarityTransform
from .mesh import TriangleMesh, load_mesh
from .properties import PhysicalProperties

SCHEMA_VERSION = 1
PROVENANCE_KINDS = ("measured", "registered", "estimated", "default", "ground-truth")


@dataclass(frozen=True)
class SceneObject:
    id: str
    mesh_path: str
    pose: SimilarityTransform
    label: int = 0
    category: str = "unknown"
    properties: PhysicalProperties | None = None
    mass: float | None = None
    provenance: dict = field(default_factory=dict)
    mesh: TriangleMesh | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": int(self.label),
            "category": self.category,
            "mesh": self.mesh_path,
            "pose": self.pose.to_dict(),
            "properties": None if self.properties is None else self.properties.to_dict(),
            "mass": self.mass,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneObject:
        return cls(
            id=str(d["id"]),
            mesh_path=d["mesh"],
            pose=SimilarityTransform.from_dict(d["pose"]),
            label=int(d.get("label", 0)),
            category=d.get("category", "unknown"),
            properties=None if d.get("properties") is None else PhysicalProperties.from_dict(d["properties"]),
            mass=d.get("mass"),
            provenance=d.get("provenance", {}),
        )


@dataclass(frozen=True)
class Background:
    mesh_path: str | None = None
    plane_primitive: bool = False
    color: tuple = (0.5, 0.5, 0.5)
    mesh: TriangleMesh | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"mesh": self.mesh_path, "plane_primitive": self.plane_primitive, "color": [float(c) for c in self.color]}

    @classmethod
    def from_dict(cls, d: dict) -> Background:
        return cls(d.get("mesh"), bool(d.get("plane_primitive", False)), tuple(d.get("color", (0.5, 0.5, 0.5))))


@dataclass(frozen=True)
class SceneConfig:
    intrinsics: Intrinsics
    world_from_camera: RigidTransform
    supported_plane: Plane = field(default_factory=lambda: Plane([0.0, 0.0, 1.0], 0.0))
    objects: tuple = ()
    background: Background | None = None
    robot_placements: tuple = ()
    camera_to_robot: RigidTransform | None = None
    provenance: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"object ids must be unique, got {ids}")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "robot_placements", tuple(self.robot_placements))

    @property
    def camera_from_world(self) -> RigidTransform:
        return self.world_from_camera.inverse()

    def with_objects(self, objects) -> SceneConfig:
        return replace(self, objects=tuple(objects))

    def without_objects(self) -> SceneConfig:
        return replace(self, objects=())

    def _resolve(self, rel: str) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def object_mesh(self, obj: SceneObject) -> TriangleMesh:
        if obj.mesh is not None:
            return obj.mesh
        try:
            return load_mesh(self._resolve(obj.mesh_path))
        except AssetError as exc:
            raise AssetError(f"object {obj.id!r}: {exc}", object_id=obj.id) from exc

    def background_mesh(self) -> TriangleMesh:
        bg = self.background
        if bg is None or (bg.mesh is None and bg.mesh_path is None):
            raise ConfigurationError("scene has no background mesh")
        if bg.mesh is not None:
            return bg.mesh
        try:
            return load_mesh(self._resolve(bg.mesh_path))
        except AssetError as exc:
            raise AssetError(f"background: {exc}", object_id="background") from exc

    def has_background_geometry(self) -> bool:
        bg = self.background
        return bg is not None and (bg.plane_primitive or bg.mesh is not None or bg.mesh_path is not None)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "camera": {"intrinsics": self.intrinsics.to_dict(), "world_from_camera": self.world_from_camera.to_dict()},
            "supported_plane": self.supported_plane.to_dict(),
            "objects": [o.to_dict() for o in self.objects],
            "background": None if self.background is None else self.background.to_dict(),
            "robot_placements": [dict(p) for p in self.robot_placements],
            "camera_to_robot": None if self.camera_to_robot is None else self.camera_to_robot.to_dict(),
            "provenance": dict(self.provenance),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> SceneConfig:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported scene schema_version {version!r}")
        cam = d["camera"]
        return cls(
            intrinsics=Intrinsics.from_dict(cam["intrinsics"]),
            world_from_camera=RigidTransform.from_dict(cam["world_from_camera"]),
            supported_plane=Plane.from_dict(d.get("supported_plane", {"normal": [0, 0, 1], "offset": 0})),
            objects=tuple(SceneObject.from_dict(o) for o in d.get("objects", [])),
            background=None if d.get("background") is None else Background.from_dict(d["background"]),
            robot_placements=tuple(d.get("robot_placements", [])),
            camera_to_robot=None if d.get("camera_to_robot") is None else RigidTransform.from_dict(d["camera_to_robot"]),
            provenance=d.get("provenance", {}),
            metadata=d.get("metadata", {}),
            base_dir=None if base_dir is None else str(base_dir),
        )

    def dumps(self) -> str:
        return dumps_json(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> SceneConfig:
        path = Path(path)
        if not path.exists():
            raise InputError(f"scene file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps_json(payload) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=True) + "\n"
