"""Find robot base positions that can reach everything on the table.

Uses the scene recovered by demo 01 if you pass its work directory, otherwise
recovers a fresh one first.

    python demos/02_place_robot.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from imagescene import NoPlacementError, PipelineConfig, load_profile, place_robot, recover, verify_placement
from imagescene.pipeline import scene_boxes
from imagescene.scene import SceneConfig
from imagescene.synth import synth_scene

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="imagescene-demo-"))
scene_path = workdir / "recovered" / "scene.json"
if not scene_path.exists():
    recover(PipelineConfig.load(synth_scene("tabletop-basic", seed=2).write(workdir)))

for name in ("humanoid", "tabletop-arm-7dof"):
    profile = load_profile(name)
    print(f"\n{name}: reach shell {profile.r_min}-{profile.r_max} m around a shoulder {profile.mount_height} m up")
    try:
        candidates = place_robot(scene_path, profile, n_samples=512, seed=0)
    except NoPlacementError as exc:
        # the support plane here is the tabletop; a standing robot belongs on a floor scene
        print(f"  no placement: {exc.violated} misses by {-exc.margin:.2f} m")
        continue
    print(f"  {len(candidates)} feasible bases out of 512 sampled")
    scene = SceneConfig.load(scene_path)
    boxes, obstacle = scene_boxes(scene)
    for c in candidates[:3]:
        x, y, _ = c.position
        yaw = np.degrees(np.arctan2(c.base_pose.matrix[1, 0], c.base_pose.matrix[0, 0]))
        tight = min(c.margins, key=c.margins.get)
        # each candidate survives an independent re-check
        assert verify_placement(c, boxes, obstacle, profile).ok
        print(f"  base ({x:+.3f}, {y:+.3f}) m, yaw {yaw:+6.1f} deg, clearance {100 * c.clearance:.1f} cm, tightest: {tight}")

print(f"\nlast successful placements stored in {scene_path} and {scene_path.with_name('placements.json')}")
