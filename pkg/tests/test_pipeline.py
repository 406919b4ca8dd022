import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from imagescene.cli import main
from imagescene.compositor import Frame, write_frame
from imagescene.errors import ConfigurationError, InputError
from imagescene.pipeline import PipelineConfig, recover, roundtrip, roundtrip_passes, scene_boxes
from imagescene.placement import PlacementCandidate, load_profile, verify_placement
from imagescene.raster import load_color, load_depth, load_mask, save_depth
from imagescene.registration import IcpConfig, pose_rms
from imagescene.scene import SceneConfig
from imagescene.synth import synth_scene
from imagescene.unprojection import partition, unproject


@pytest.fixture(scope="module")
def recovered(tmp_path_factory):
    d = tmp_path_factory.mktemp("basic")
    synth = synth_scene("tabletop-basic", seed=1)
    config = synth.write(d)
    assert main(["recover", "--config", str(config)]) == 0
    return d, synth


def test_scene_file_has_objects_and_provenance(recovered):
    d, synth = recovered
    doc = json.loads((d / "recovered" / "scene.json").read_text())
    assert [o["id"] for o in doc["objects"]] == ["object_1", "object_2"]
    for o in doc["objects"]:
        assert o["provenance"]["pose"] == "registered"
        assert o["mass"] > 0
    assert doc["provenance"]["camera_pose"] == "estimated"
    assert (d / "recovered" / "background.ply").exists()
    diag = json.loads((d / "recovered" / "diagnostics.json").read_text())
    assert diag["plane_inlier_count"] > 0 and "timings" in diag


def test_diagnostic_rms_is_recomputable(recovered):
    d, _ = recovered
    scene = SceneConfig.load(d / "recovered" / "scene.json")
    diag = json.loads((d / "recovered" / "diagnostics.json").read_text())
    cloud = unproject(load_depth(d / "depth.tiff"), scene.intrinsics)
    _, objects = partition(cloud, load_mask(d / "mask.png"))
    for obj in scene.objects:
        target = objects[obj.label].transformed(scene.world_from_camera)
        rms = pose_rms(scene.object_mesh(obj), target, obj.pose, IcpConfig(**diag["icp"]))
        assert abs(rms - diag["objects"][obj.id]["final_rms"]) < 1e-9


def test_place_robot_file_level(recovered, capsys):
    d, _ = recovered
    scene_path = d / "recovered" / "scene.json"
    assert main(["place-robot", str(scene_path), "--n", "128"]) == 0
    listing = json.loads((d / "recovered" / "placements.json").read_text())
    scene = SceneConfig.load(scene_path)
    assert len(scene.robot_placements) == len(listing["placements"]) > 0
    boxes, scene_box = scene_boxes(scene)
    profile = load_profile(listing["profile"]["name"])
    for record in listing["placements"]:
        assert verify_placement(PlacementCandidate.from_dict(record), boxes, scene_box, profile).ok


def test_render_and_blend_file_level(recovered, tmp_path):
    d, synth = recovered
    scene_path = d / "recovered" / "scene.json"
    assert main(["render", str(scene_path), "--output", str(tmp_path / "render"), "--no-background"]) == 0
    color = load_color(tmp_path / "render" / "color.png")
    depth = load_depth(tmp_path / "render" / "depth.tiff")
    frames = tmp_path / "frames"
    for k in range(3):
        write_frame(frames, k, Frame(color, depth, bytes([k]) * 5))
    out = tmp_path / "blended"
    code = main(["blend", str(scene_path), "--frames", str(frames), "--background", str(d / "background.png"), "--output", str(out), "--export-masks"])
    assert code == 0
    background = load_color(d / "background.png")
    for k in range(3):
        blended = load_color(out / f"{k:06d}_blend.png")
        mask = load_mask(out / f"{k:06d}_mask.png") > 0
        assert mask.any() and (~mask).any()
        np.testing.assert_array_equal(blended[mask], color[mask])
        np.testing.assert_array_equal(blended[~mask], background[~mask])
        assert (out / f"{k:06d}_action.bin").read_bytes() == bytes([k]) * 5
    meta = json.loads((out / "blend_meta.json").read_text())
    assert meta["background_depth"]["kind"] == "rendered" and meta["frames"] == 3


def test_missing_depth_exits_with_input_code(tmp_path, capsys):
    synth = synth_scene("tabletop-basic", seed=0)
    config = synth.write(tmp_path)
    (tmp_path / "depth.tiff").unlink()
    assert main(["recover", "--config", str(config)]) == InputError.exit_code == 3
    assert "depth.tiff" in capsys.readouterr().err
    assert not (tmp_path / "recovered").exists()


def test_object_without_depth_is_skipped(tmp_path):
    synth = synth_scene("tabletop-basic", seed=0)
    config = synth.write(tmp_path)
    depth = load_depth(tmp_path / "depth.tiff")
    depth[synth.mask == 2] = 0.0
    save_depth(tmp_path / "depth.tiff", depth)
    scene = recover(PipelineConfig.load(config, {"refine": False}))
    assert [o.id for o in scene.objects] == ["object_1"]
    diag = json.loads((tmp_path / "recovered" / "diagnostics.json").read_text())
    assert any("object_2" in w for w in diag["warnings"])


def test_config_rejects_unknown_fields(tmp_path):
    with pytest.raises(ConfigurationError, match="bogus"):
        PipelineConfig.from_dict({"image": "a", "depth": "b", "intrinsics": "c", "mask": "d", "output_dir": "o", "icp": {"bogus": 1}}, tmp_path)
    cfg = PipelineConfig.from_dict(
        {"image": "a", "depth": "b", "intrinsics": "c", "mask": "d", "output_dir": "o", "seed": 7, "ransac": {"inlier_distance_m": 0.01}},
        tmp_path,
    )
    assert cfg.ransac.inlier_distance == 0.01 and cfg.ransac.seed == 7 and cfg.icp.seed == 7


def test_roundtrip_report_schema():
    report = roundtrip("tabletop-basic", seed=0, refine=False)
    assert set(report) >= {"schema_version", "preset", "seed", "depth_noise", "plane_normal_error_deg", "objects", "blend", "timings"}
    for o in report["objects"]:
        assert set(o) == {"id", "recovered", "position_error_mm", "rotation_error_deg", "scale_error_pct"}
    assert set(report["blend"]) == {"inside_mask_equals_full_render", "outside_mask_equals_background", "foreground_pixels"}
    json.dumps(report)
    assert isinstance(roundtrip_passes(report), bool)


def test_props_command(capsys, monkeypatch):
    monkeypatch.delenv("IMAGESCENE_PROPS_ENDPOINT", raising=False)
    assert main(["props", "banana"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["provenance"] == "table"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "imagescene", "synth", "--preset", "cluttered", "--seed", "2", "--output", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert Path(json.loads(res.stdout)["config"]).exists()
    bad = subprocess.run([sys.executable, "-m", "imagescene", "place-robot", str(tmp_path / "none.json")], capture_output=True, text=True)
    assert bad.returncode == 3
