"""Synthetic ground-truth scenes for round-trip testing.

Presets
-------
tabletop-basic
    Two objects, camera with zero roll.
tabletop-tilted
    Two objects, camera rolled 15 degrees about its optical axis, so the
    image-plane direction of the table normal sits 15 degrees off the
    image's vertical axis (``metadata["plane_tilt_deg"]``).
cluttered
    Three or four objects, random roll up to 10 degrees.

Objects are asymmetric extruded prisms (no proper rotational symmetry, so
rotation error is well defined) resting on a large textured table at z = 0.
Their canonical meshes are centered on their bounding box with unit
longest side; the ground-truth pose carries the metric scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import Aabb, Intrinsics, Plane, RigidTransform, SimilarityTransform, rot_z
from .mesh import TriangleMesh, extrude, quad, save_mesh
from .raster import save_color, save_depth, save_intrinsics, save_mask
from .renderer import RenderItem, RenderSettings, rasterize
from .scene import Background, SceneConfig, SceneObject

PRESETS = ("tabletop-basic", "tabletop-tilted", "cluttered")

_PROFILES = {
    "lblock": ([(0, 0), (1, 0), (1, 0.35), (0.35, 0.35), (0.35, 0.7), (0, 0.7)], 0.5),
    "wedge": ([(0, 0), (1, 0), (0.3, 0.6)], 0.45),
    "notched": ([(0, 0), (1, 0), (1, 0.6), (0.7, 0.6), (0.7, 0.3), (0.45, 0.3), (0.45, 0.6), (0, 0.6)], 0.4),
}
_CATEGORIES = {"lblock": "toy block", "wedge": "wooden block", "notched": "lego"}
_COLORS = [(0.85, 0.25, 0.2), (0.2, 0.55, 0.85), (0.95, 0.8, 0.2), (0.3, 0.75, 0.35)]

DEFAULT_INTRINSICS = Intrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)


def canonical_shape(name: str) -> TriangleMesh:
    poly, h = _PROFILES[name]
    m = extrude(poly, h)
    lo, hi = m.bounds()
    v = (m.vertices - 0.5 * (lo + hi)) / (hi - lo).max()
    return TriangleMesh(v, m.triangles)


def table_mesh(size: float = 3.0, seed: int = 0) -> TriangleMesh:
    """Textured square at z = 0: wood-like stripes plus a faint checker."""
    rng = np.random.default_rng(seed)
    n = 256
    yy, xx = np.mgrid[0:n, 0:n]
    grain = 0.5 + 0.5 * np.sin(xx / 3.0 + 2.0 * np.sin(yy / 17.0))
    checker = ((xx // 32 + yy // 32) % 2).astype(float)
    noise = rng.random((n, n))
    base = np.array([0.55, 0.4, 0.28])
    tex = base[None, None, :] * (0.75 + 0.15 * grain[..., None] + 0.05 * checker[..., None] + 0.05 * noise[..., None])
    tex = np.clip(np.floor(tex * 255 + 0.5), 0, 255).astype(np.uint8)
    q = quad(size, size, uv_repeat=4.0)
    return replace(q, texture=tex, colors=np.tile(base, (4, 1)))


def look_at(eye, target, roll: float = 0.0) -> RigidTransform:
    """world_from_camera for a camera at ``eye`` looking at ``target`` (+Y down, +Z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    r = np.column_stack([right, down, f]) @ rot_z(roll)
    return RigidTransform.from_matrix(r, eye)


@dataclass
class SynthScene:
    preset: str
    seed: int
    scene: SceneConfig  # ground truth, meshes held in memory
    meshes: dict  # label -> canonical mesh
    color: np.ndarray
    depth: np.ndarray  # possibly noisy
    depth_clean: np.ndarray
    mask: np.ndarray
    ground_mask: np.ndarray
    background_color: np.ndarray  # object-free render (stands in for the inpainted image)
    background_depth: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def intrinsics(self) -> Intrinsics:
        return self.scene.intrinsics

    def write(self, directory) -> Path:
        """Write inputs for ``recover`` plus ground truth; returns the config path."""
        d = Path(directory)
        (d / "meshes").mkdir(parents=True, exist_ok=True)
        save_color(d / "image.png", self.color)
        save_depth(d / "depth.tiff", self.depth)
        save_mask(d / "mask.png", self.mask)
        save_mask(d / "ground_mask.png", self.ground_mask.astype(np.uint8))
        save_color(d / "background.png", self.background_color)
        save_depth(d / "background_depth.tiff", self.background_depth)
        save_intrinsics(d / "intrinsics.json", self.intrinsics)
        objects = []
        for obj in self.scene.objects:
            save_mesh(self.meshes[obj.label], d / obj.mesh_path)
            objects.append({"label": obj.label, "mesh": obj.mesh_path, "category": obj.category})
        save_mesh(self.scene.background.mesh, d / "meshes" / "table.obj")
        gt = replace(self.scene, background=replace(self.scene.background, mesh_path="meshes/table.obj"))
        gt.save(d / "scene_gt.json")
        config = {
            "image": "image.png",
            "depth": "depth.tiff",
            "intrinsics": "intrinsics.json",
            "mask": "mask.png",
            "ground_mask": "ground_mask.png",
            "background_image": "background.png",
            "objects": objects,
            "output_dir": "recovered",
            "seed": self.seed,
        }
        path = d / "config.json"
        path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _place_objects(rng, shapes, scales, yaws, radius=0.13, margin=0.015, tries=2000):
    poses, boxes = [], []
    for shape, s, yaw in zip(shapes, scales, yaws):
        mesh = canonical_shape(shape)
        lo, hi = mesh.bounds()
        for _ in range(tries):
            xy = rng.uniform(-radius, radius, 2)
            pose = SimilarityTransform.from_parts(rot_z(yaw), [xy[0], xy[1], -lo[2] * s], s)
            box = Aabb.from_points(pose.apply(mesh.vertices))
            if all(_separated(box, b, margin) for b in boxes):
                poses.append(pose)
                boxes.append(box)
                break
        else:
            raise ConfigurationError("could not place objects without overlap")
    return poses, boxes


def _separated(a: Aabb, b: Aabb, margin: float) -> bool:
    return bool(np.any(a.min[:2] > b.max[:2] + margin) or np.any(b.min[:2] > a.max[:2] + margin))


def synth_scene(preset: str, seed: int = 0, depth_noise: float = 0.0, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> SynthScene:
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {PRESETS}")
    rng = np.random.default_rng(seed)
    if preset == "cluttered":
        count = int(rng.integers(3, 5))
        roll = np.deg2rad(rng.uniform(-10, 10))
    else:
        count = 2
        roll = np.deg2rad(15.0) if preset == "tabletop-tilted" else 0.0

    names = list(_PROFILES)
    shapes = [names[int(k)] for k in rng.permutation(len(names) + 1)[:count] % len(names)]
    scales = rng.uniform(0.07, 0.10, count)
    yaws = rng.uniform(0, 2 * np.pi, count)
    poses, boxes = _place_objects(rng, shapes, scales, yaws)

    center = Aabb.from_points(np.vstack([b.corners() for b in boxes])).center
    azimuth = rng.uniform(0, 2 * np.pi)
    elevation = np.deg2rad(rng.uniform(45, 60))
    distance = rng.uniform(0.55, 0.65)
    eye = center + distance * np.array(
        [np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)]
    )
    wfc = look_at(eye, center, roll)

    table = table_mesh(seed=seed)
    meshes, objects = {}, []
    for k, (shape, pose) in enumerate(zip(shapes, poses), start=1):
        mesh = canonical_shape(shape).with_color(_COLORS[(k - 1) % len(_COLORS)])
        meshes[k] = mesh
        objects.append(
            SceneObject(
                id=f"object_{k}",
                mesh_path=f"meshes/object_{k}.obj",
                pose=pose,
                label=k,
                category=_CATEGORIES[shape],
                provenance={"pose": "ground-truth", "scale": "ground-truth"},
                mesh=mesh,
            )
        )
    normal_cam = wfc.inverse().apply_vector([0.0, 0.0, 1.0])
    scene = SceneConfig(
        intrinsics=intrinsics,
        world_from_camera=wfc,
        supported_plane=Plane([0.0, 0.0, 1.0], 0.0),
        objects=tuple(objects),
        background=Background(mesh_path=None, plane_primitive=False, mesh=table),
        provenance={"intrinsics": "ground-truth", "camera_pose": "ground-truth"},
        metadata={
            "preset": preset,
            "seed": seed,
            "plane_tilt_deg": float(np.rad2deg(roll)),
            "plane_normal_camera": [float(x) for x in normal_cam],
            "shapes": shapes,
        },
    )

    settings = RenderSettings.for_intrinsics(intrinsics, shading="textured")
    cfw = wfc.inverse()
    items = [RenderItem(table, SimilarityTransform(), 0)] + [
        RenderItem(o.mesh, o.pose, o.label) for o in objects
    ]
    full = rasterize(items, intrinsics, cfw, settings)
    bare = rasterize(items[:1], intrinsics, cfw, settings)

    depth = full.depth.copy()
    if depth_noise > 0:
        valid = depth > 0
        noise_rng = np.random.default_rng([seed, 1])
        depth[valid] += noise_rng.normal(0.0, depth_noise, int(valid.sum()))
        depth[valid] = np.maximum(depth[valid], 1e-4)

    return SynthScene(
        preset=preset,
        seed=seed,
        scene=scene,
        meshes=meshes,
        color=full.color,
        depth=depth,
        depth_clean=full.depth,
        mask=full.instance_mask(),
        ground_mask=full.ids == 0,
        background_color=bare.color,
        background_depth=bare.depth,
        metadata=dict(scene.metadata),
    )
