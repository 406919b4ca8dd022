"""End-to-end stages: recover a scene, place a robot, blend frames, round-trip check.

Pipeline configuration file (JSON; relative paths resolve against the file's
directory)::

    {
      "image": "image.png", "depth": "depth.tiff", "intrinsics": "intrinsics.json",
      "mask": "mask.png", "ground_mask": "ground_mask.png",      # ground_mask optional
      "background_image": "background.png",                      # optional, colors the background mesh
      "mesh_dir": "meshes",                                      # optional, see below
      "objects": [{"label": 1, "mesh": "meshes/mug.obj", "category": "mug",
                   "id": "mug", "context": "white ceramic mug"}],
      "output_dir": "recovered",
      "seed": 0,
      "refine": true,
      "workers": 1,
      "ransac": {...}, "icp": {...}, "background": {...}, "blend": {...},
      "placement": {"profile": "tabletop-arm-7dof", "n_samples": 512, "margin": 0.05},
      "properties": {"endpoint": null, "table": null, "timeout": 10.0},
      "camera_to_robot": {"rotation_wxyz": [...], "translation": [...]}   # optional
    }

Objects without an explicit entry are looked up in ``mesh_dir`` as
``object_<label>.obj|.ply`` or ``<label>.obj|.ply``. The module config blocks
take the field names of RansacConfig, IcpConfig, BackgroundBuildConfig and
BlendConfig. ``seed`` overrides the seeds inside those blocks.

``recover`` writes into ``output_dir``::

    scene.json          the scene (deterministic bytes for identical inputs and seed)
    background.ply      background mesh, world frame, binary little-endian
    meshes/<id>.obj     canonical object meshes referenced by the scene
    diagnostics.json    RMS, inlier counts, warnings and wall-clock timings
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .background import BackgroundBuildConfig, background_depth, build_background
from .compositor import BlendConfig, blend_frame, blend_sequence, read_frames, write_blended
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    InputError,
    RegistrationFailedError,
    SceneError,
    StageError,
)
from .geometry import Aabb, Plane, RigidTransform, rotation_angle
from .gravity import RansacConfig, align_scene
from .mesh import load_mesh, save_mesh
from .placement import DEFAULT_MARGIN, load_profile, placement_from_camera, sample_placements
from .properties import RemoteEstimator, estimate_properties, load_table, mass_from_density
from .raster import check_shape, load_color, load_depth, load_intrinsics, load_mask
from .registration import IcpConfig, icp_register, pose_rms, refine_visible
from .renderer import RenderSettings, rasterize, render, scene_items
from .scene import Background, SceneConfig, SceneObject, dumps_json
from .unprojection import partition, unproject

log = logging.getLogger(__name__)

MIN_OBJECT_POINTS = 10
OBSTACLE_HEIGHT = 0.02  # background points this far above the plane count as obstacles for placement


def _block(cls, data: dict | None, **overrides):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if k in known})
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"bad {cls.__name__} block: {exc}") from exc


def _ransac_aliases(block: dict | None) -> dict | None:
    if block and "inlier_distance_m" in block:
        block = dict(block)
        block["inlier_distance"] = block.pop("inlier_distance_m")
    return block


@dataclass(frozen=True)
class ObjectInput:
    label: int
    mesh: Path
    category: str = "unknown"
    id: str | None = None
    context: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    image: Path
    depth: Path
    intrinsics: Path
    mask: Path
    output_dir: Path
    ground_mask: Path | None = None
    background_image: Path | None = None
    mesh_dir: Path | None = None
    objects: tuple = ()
    seed: int = 0
    refine: bool = True
    workers: int = 1
    ransac: RansacConfig = field(default_factory=RansacConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    background: BackgroundBuildConfig = field(default_factory=BackgroundBuildConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    placement: dict = field(default_factory=dict)
    properties: dict = field(default_factory=dict)
    camera_to_robot: RigidTransform | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> PipelineConfig:
        base = Path(base_dir)

        def path(key, required=True):
            v = d.get(key)
            if v is None:
                if required:
                    raise ConfigurationError(f"pipeline config is missing {key!r}")
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        seed = int(d.get("seed", 0))
        workers = int(d.get("workers", 1))
        objects = []
        for o in d.get("objects", []):
            if "label" not in o or "mesh" not in o:
                raise ConfigurationError("each object entry needs 'label' and 'mesh'")
            mesh = Path(o["mesh"])
            objects.append(
                ObjectInput(int(o["label"]), mesh if mesh.is_absolute() else base / mesh, o.get("category", "unknown"), o.get("id"), o.get("context"))
            )
        c2r = d.get("camera_to_robot")
        return cls(
            image=path("image"),
            depth=path("depth"),
            intrinsics=path("intrinsics"),
            mask=path("mask"),
            output_dir=path("output_dir", required=False) or base / "recovered",
            ground_mask=path("ground_mask", False),
            background_image=path("background_image", False),
            mesh_dir=path("mesh_dir", False),
            objects=tuple(objects),
            seed=seed,
            refine=bool(d.get("refine", True)),
            workers=workers,
            ransac=_block(RansacConfig, _ransac_aliases(d.get("ransac")), seed=seed),
            icp=_block(IcpConfig, d.get("icp"), seed=seed, workers=workers),
            background=_block(BackgroundBuildConfig, d.get("background")),
            blend=_block(BlendConfig, d.get("blend")),
            placement=dict(d.get("placement", {})),
            properties=dict(d.get("properties", {})),
            camera_to_robot=None if c2r is None else RigidTransform.from_dict(c2r),
        )

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> PipelineConfig:
        path = Path(path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, path.parent)

    def input_paths(self) -> list[Path]:
        paths = [self.image, self.depth, self.intrinsics, self.mask]
        paths += [p for p in (self.ground_mask, self.background_image) if p is not None]
        paths += [o.mesh for o in self.objects]
        return paths


@dataclass
class _Timer:
    timings: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name):
        """Accumulate wall time under ``name``; scene errors leave tagged with the stage."""
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except SceneError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _find_mesh(mesh_dir: Path | None, label: int) -> Path | None:
    if mesh_dir is None:
        return None
    for stem in (f"object_{label}", str(label)):
        for ext in (".obj", ".ply"):
            p = mesh_dir / (stem + ext)
            if p.exists():
                return p
    return None


def _estimator(cfg: PipelineConfig):
    endpoint = cfg.properties.get("endpoint")
    if endpoint:
        return RemoteEstimator(endpoint, float(cfg.properties.get("timeout", 10.0)))
    return RemoteEstimator.from_env()


def recover(cfg: PipelineConfig) -> SceneConfig:
    """Image + depth + masks + meshes -> persisted, gravity-aligned scene."""
    missing = [str(p) for p in cfg.input_paths() if not Path(p).exists()]
    if missing:
        raise InputError(f"missing input files: {', '.join(missing)}")
    if cfg.mesh_dir is not None and not cfg.mesh_dir.is_dir():
        raise InputError(f"mesh directory not found: {cfg.mesh_dir}")

    timer = _Timer()
    warnings: list[str] = []
    diagnostics: dict = {"objects": {}, "warnings": warnings, "icp": asdict(cfg.icp)}
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def fail(exc: StageError):
        diagnostics["failed_stage"] = exc.stage
        diagnostics["error"] = str(exc.cause)
        diagnostics["timings"] = timer.timings
        (out / "diagnostics.json").write_text(dumps_json(diagnostics), encoding="utf-8")
        raise exc

    try:
        with timer.stage("load"):
            K = load_intrinsics(cfg.intrinsics)
            depth = load_depth(cfg.depth)
            image = load_color(cfg.image)
            mask = load_mask(cfg.mask)
            for name, arr in (("depth", depth), ("image", image), ("mask", mask)):
                check_shape(name, arr, K.shape)
            ground_mask = None
            if cfg.ground_mask is not None:
                ground_mask = load_mask(cfg.ground_mask) > 0
                check_shape("ground mask", ground_mask, K.shape)
            bg_image = image
            if cfg.background_image is not None:
                bg_image = load_color(cfg.background_image)
                check_shape("background image", bg_image, K.shape)

        with timer.stage("unprojection"):
            cloud = unproject(depth, K)
            if len(cloud) == 0:
                raise DegenerateInputError("depth has no valid pixels")
            background_cloud, object_clouds = partition(cloud, mask)

        with timer.stage("gravity-align"):
            if ground_mask is not None:
                ground = cloud.subset(ground_mask[cloud.pixels[:, 1], cloud.pixels[:, 0]])
            else:
                ground = background_cloud
            alignment = align_scene(cloud, ground, K, cfg.ransac)
            wfc = alignment.world_from_camera
            diagnostics["plane_inlier_count"] = alignment.inlier_count
            diagnostics["ground_candidates"] = len(ground)
    except StageError as exc:
        fail(exc)

    inputs = {o.label: o for o in cfg.objects}
    labels = sorted(set(object_clouds) | set(inputs))
    objects = []
    client = _estimator(cfg)
    table = load_table(cfg.properties.get("table")) if cfg.properties.get("table") else None
    (out / "meshes").mkdir(exist_ok=True)

    for label in labels:
        spec = inputs.get(label)
        obj_id = (spec.id if spec and spec.id else None) or f"object_{label}"
        target = object_clouds.get(label)
        if target is None or len(target) < MIN_OBJECT_POINTS:
            msg = f"{obj_id}: only {0 if target is None else len(target)} valid depth pixels, skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        mesh_path = spec.mesh if spec else _find_mesh(cfg.mesh_dir, label)
        if mesh_path is None:
            msg = f"{obj_id}: no mesh for label {label}, skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        try:
            with timer.stage("registration"):
                mesh = load_mesh(mesh_path)
                world_target = target.transformed(wfc)
                result = icp_register(mesh, world_target, cfg.icp)
                pose = result.pose
                if cfg.refine:
                    pose = refine_visible(mesh, world_target, pose, K, wfc, depth, cfg.icp)
        except StageError as exc:
            if not isinstance(exc.cause, RegistrationFailedError):
                fail(exc)
            msg = f"{obj_id}: registration failed ({exc.cause}), skipped"
            log.warning(msg)
            warnings.append(msg)
            continue

        with timer.stage("properties"):
            response = estimate_properties(spec.category if spec else "unknown", client, spec.context if spec else None, table)
            props = response.properties
            if props.mass is not None:
                mass = props.mass
            else:
                try:
                    mass = mass_from_density(mesh, pose.scale, props.density)
                except SceneError as exc:
                    mass = None
                    warnings.append(f"{obj_id}: no mass ({exc})")

        rel = f"meshes/{obj_id}.obj"
        save_mesh(mesh, out / rel)
        objects.append(
            SceneObject(
                id=obj_id,
                mesh_path=rel,
                pose=pose,
                label=label,
                category=spec.category if spec else "unknown",
                properties=props,
                mass=mass,
                provenance={
                    "pose": "registered",
                    "scale": "registered",
                    "properties": "default" if response.provenance == "default" else "estimated",
                    "properties_source": response.provenance,
                    "mass": "default" if response.provenance == "default" else "estimated",
                },
                mesh=mesh,
            )
        )
        diagnostics["objects"][obj_id] = {
            "label": label,
            "points": len(target),
            "rms": result.rms,
            "final_rms": pose_rms(mesh, world_target, pose, cfg.icp),
            "iterations": result.iterations_used,
            "start_index": result.start_index,
            "refined": cfg.refine,
        }

    if not objects and labels:
        fail(StageError("registration", RegistrationFailedError("no object could be registered")))

    try:
        with timer.stage("background-geometry"):
            world_points = [wfc.apply(background_cloud.points)] if len(background_cloud) else []
            world_points += [o.pose.apply(o.mesh.vertices) for o in objects]
            scene_box = Aabb.from_points(np.vstack(world_points)) if world_points else Aabb(-np.ones(3), np.ones(3))
            plane = Plane([0.0, 0.0, 1.0], 0.0)
            bg_mesh, completed = build_background(background_cloud, mask, K, plane, scene_box, wfc, bg_image, cfg.background)
            save_mesh(bg_mesh, out / "background.ply", binary=True)
            diagnostics["background"] = {
                "triangles": int(len(bg_mesh.triangles)),
                "completed_points": len(completed),
                "completed_from_plane": int((completed.labels == 1).sum()) if completed.labels is not None else 0,
                "scene_aabb": scene_box.to_dict(),
            }
    except StageError as exc:
        fail(exc)

    scene = SceneConfig(
        intrinsics=K,
        world_from_camera=wfc,
        supported_plane=plane,
        objects=tuple(objects),
        background=Background("background.ply", cfg.background.use_plane_primitive, mesh=bg_mesh),
        camera_to_robot=cfg.camera_to_robot,
        provenance={
            "intrinsics": "measured",
            "depth": "measured",
            "camera_pose": "estimated",
            "supported_plane": "estimated",
            "background": "measured+completed",
        },
        metadata={"seed": cfg.seed, "refine": cfg.refine, "skipped": [w.split(":")[0] for w in warnings]},
        base_dir=str(out),
    )
    scene.save(out / "scene.json")
    diagnostics["timings"] = timer.timings
    diagnostics["timings"]["total"] = sum(timer.timings.values())
    (out / "diagnostics.json").write_text(dumps_json(diagnostics), encoding="utf-8")
    return scene


# ---------------------------------------------------------------------------
# Robot placement


def scene_boxes(scene: SceneConfig) -> tuple[list[Aabb], Aabb | None]:
    """World AABBs of the objects, and the obstacle box for base collision.

    The obstacle box bounds the objects plus background geometry rising
    more than OBSTACLE_HEIGHT above the support plane (the plane itself is
    where the base stands, so it is not an obstacle).
    """
    boxes = [Aabb.from_points(o.pose.apply(scene.object_mesh(o).vertices)) for o in scene.objects]
    pts = [b.corners() for b in boxes]
    bg = scene.background
    if bg is not None and (bg.mesh is not None or bg.mesh_path is not None):
        v = scene.background_mesh().vertices
        v = v[v[:, 2] > OBSTACLE_HEIGHT]
        if len(v):
            pts.append(v)
    scene_box = Aabb.from_points(np.vstack(pts)) if pts else None
    return boxes, scene_box


def place_robot(scene_path, profile, n_samples: int = 512, seed: int = 0, margin: float = DEFAULT_MARGIN, output=None):
    """Sample placements, store them in the scene file and a standalone list."""
    scene_path = Path(scene_path)
    scene = SceneConfig.load(scene_path)
    profile = load_profile(profile)
    if scene.camera_to_robot is not None:
        candidates = [placement_from_camera(scene.world_from_camera, scene.camera_to_robot)]
        source = "camera_to_robot"
    else:
        boxes, scene_box = scene_boxes(scene)
        candidates = sample_placements(boxes, scene_box, profile, n_samples, seed, margin)
        source = "sampled"
    records = [c.to_dict(profile) for c in candidates]
    scene = replace(scene, robot_placements=tuple(records))
    scene.save(scene_path)
    output = Path(output) if output else scene_path.with_name("placements.json")
    payload = {"profile": profile.to_dict(), "source": source, "seed": seed, "margin": margin, "placements": records}
    output.write_text(dumps_json(payload), encoding="utf-8")
    return candidates


# ---------------------------------------------------------------------------
# Blending


def blend(
    scene_path,
    frames_dir,
    background_image,
    output_dir,
    cfg: BlendConfig = BlendConfig(),
    background_depth_path=None,
    workers: int = 1,
) -> Path:
    """Blend a frame directory over the background; see compositor for the layout."""
    scene = SceneConfig.load(scene_path)
    frames = read_frames(frames_dir)
    i_b = load_color(background_image)
    if background_depth_path is not None:
        d_b = load_depth(background_depth_path)
        source = {"kind": "file", "path": Path(background_depth_path).name}
    else:
        d_b = background_depth(scene)
        source = {"kind": "rendered", "path": None}
    check_shape("background image", i_b, scene.intrinsics.shape)
    check_shape("background depth", d_b, scene.intrinsics.shape)
    blended = blend_sequence(frames, i_b, d_b, cfg, workers)
    meta = {"epsilon": cfg.epsilon, "frames": len(blended), "background_depth": source, "export_masks": cfg.export_masks}
    return write_blended(output_dir, blended, meta)


# ---------------------------------------------------------------------------
# Round trip


def _camera_pose_errors(gt_scene: SceneConfig, scene: SceneConfig) -> list[dict]:
    gt_cfw = gt_scene.camera_from_world
    cfw = scene.camera_from_world
    by_label = {o.label: o for o in scene.objects}
    rows = []
    for g in gt_scene.objects:
        o = by_label.get(g.label)
        if o is None:
            rows.append({"id": g.id, "recovered": False})
            continue
        p_gt = gt_cfw.apply(np.asarray(g.pose.translation))
        p = cfw.apply(np.asarray(o.pose.translation))
        r_gt = gt_cfw.matrix @ g.pose.matrix
        r = cfw.matrix @ o.pose.matrix
        rows.append(
            {
                "id": g.id,
                "recovered": True,
                "position_error_mm": float(1000 * np.linalg.norm(p - p_gt)),
                "rotation_error_deg": float(np.degrees(rotation_angle(r, r_gt))),
                "scale_error_pct": float(100 * (o.pose.scale / g.pose.scale - 1)),
            }
        )
    return rows


def blend_exactness(scene: SceneConfig, background_image: np.ndarray, epsilon: float = BlendConfig().epsilon) -> dict:
    """Blend the scene's own object render and compare against its full render."""
    K = scene.intrinsics
    settings = RenderSettings.for_intrinsics(K)
    items, _ = scene_items(scene, include_objects=True, include_background=False)
    fg = rasterize(items, K, scene.camera_from_world, settings)
    full = render(scene, settings)
    d_b = background_depth(scene)
    out, mask = blend_frame(fg.color, fg.depth, background_image, d_b, BlendConfig(epsilon), return_mask=True)
    return {
        "inside_mask_equals_full_render": bool(np.array_equal(out[mask], full.color[mask])),
        "outside_mask_equals_background": bool(np.array_equal(out[~mask], background_image[~mask])),
        "foreground_pixels": int(mask.sum()),
    }


def roundtrip(preset: str, seed: int = 0, depth_noise: float = 0.0, workdir=None, refine: bool = True, workers: int = 1) -> dict:
    """Synthesize a scene, recover it from files, and report errors against ground truth."""
    import tempfile

    from .synth import synth_scene

    t0 = time.perf_counter()
    report: dict = {"schema_version": 1, "preset": preset, "seed": seed, "depth_noise": depth_noise}
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory()
        workdir = tmp.name
    try:
        synth = synth_scene(preset, seed, depth_noise)
        config_path = synth.write(workdir)
        t_synth = time.perf_counter() - t0
        cfg = PipelineConfig.load(config_path, {"refine": refine, "workers": workers})
        t1 = time.perf_counter()
        try:
            scene = recover(cfg)
        except SceneError as exc:
            report.update({"error": str(exc), "timings": {"synth_s": t_synth, "recover_s": time.perf_counter() - t1}})
            return report
        t_recover = time.perf_counter() - t1

        gt_n = np.asarray(synth.metadata["plane_normal_camera"])
        n_cam = scene.camera_from_world.apply_vector([0.0, 0.0, 1.0])
        report["plane_normal_error_deg"] = float(np.degrees(np.arccos(np.clip(n_cam @ gt_n, -1.0, 1.0))))
        report["objects"] = _camera_pose_errors(synth.scene, scene)
        t2 = time.perf_counter()
        report["blend"] = blend_exactness(scene, synth.background_color)
        report["timings"] = {"synth_s": t_synth, "recover_s": t_recover, "blend_s": time.perf_counter() - t2}
    finally:
        if tmp is not None:
            tmp.cleanup()
    return report


def roundtrip_passes(report: dict, noisy: bool = False) -> bool:
    """Thresholds: noise-free 0.5 deg / 2 mm / 2 deg / 2 %; noisy 2 deg / 10 mm."""
    if "error" in report or not all(o.get("recovered") for o in report.get("objects", [])):
        return False
    if noisy:
        return report["plane_normal_error_deg"] < 2.0 and all(o["position_error_mm"] < 10.0 for o in report["objects"])
    return report["plane_normal_error_deg"] < 0.5 and all(
        o["position_error_mm"] < 2.0 and o["rotation_error_deg"] < 2.0 and abs(o["scale_error_pct"]) < 2.0
        for o in report["objects"]
    )
