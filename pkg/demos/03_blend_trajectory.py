"""Composite a simulated rollout over the real background image.

A gripper-sized box sweeps across the recovered table. Each rendered frame is
gated against the background depth, so the box is hidden whenever the real
scene is in front of it. The action payload rides along untouched.

    python demos/03_blend_trajectory.py [workdir]
"""

import struct
import sys
import tempfile
from pathlib import Path

import numpy as np

from imagescene import PipelineConfig, recover
from imagescene.compositor import BlendConfig, Frame, write_frame
from imagescene.geometry import SimilarityTransform
from imagescene.mesh import box
from imagescene.pipeline import blend
from imagescene.raster import load_mask
from imagescene.renderer import RenderItem, RenderSettings, rasterize, scene_items
from imagescene.scene import SceneConfig
from imagescene.synth import synth_scene

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="imagescene-demo-"))
scene_path = workdir / "recovered" / "scene.json"
if not scene_path.exists():
    recover(PipelineConfig.load(synth_scene("tabletop-basic", seed=2).write(workdir)))
scene = SceneConfig.load(scene_path)
K = scene.intrinsics

# The "simulator": recovered objects plus a moving box, rendered from the recovered camera.
items, _ = scene_items(scene, include_objects=True, include_background=False)
gripper = box((0.04, 0.04, 0.08)).with_color((0.9, 0.9, 0.95))
frames_dir = workdir / "rollout"
steps = 24
for t in range(steps):
    s = t / (steps - 1)
    position = np.array([-0.25 + 0.5 * s, 0.12 * np.sin(2 * np.pi * s), 0.04])
    pose = SimilarityTransform.from_parts(np.eye(3), position, 1.0)
    out = rasterize(items + [RenderItem(gripper, pose, 99)], K, scene.camera_from_world, RenderSettings.for_intrinsics(K))
    action = struct.pack("<3d", *position)  # opaque to the compositor
    write_frame(frames_dir, t, Frame(out.color, out.depth, action))

# Blend: the background depth comes from the recovered background mesh.
out_dir = blend(scene_path, frames_dir, workdir / "background.png", workdir / "blended", BlendConfig(export_masks=True))
print(f"{steps} frames blended into {out_dir}")
for t in range(0, steps, 6):
    kept = int((load_mask(out_dir / f"{t:06d}_mask.png") > 0).sum())
    x, y, z = struct.unpack("<3d", (out_dir / f"{t:06d}_action.bin").read_bytes())
    print(f"  frame {t:2d}: gripper at ({x:+.2f}, {y:+.2f}) m, {kept} rendered pixels kept")
