"""Command-line entry point: ``imagescene <command> ...`` (or ``python -m imagescene``).

Exit codes: 0 success, 1 unexpected scene error, 2 configuration or
precondition, 3 input file, 4 degenerate geometry, 5 registration failed,
6 no robot placement, 7 mesh asset, 8 low-confidence plane.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import SceneError
from .properties import ENDPOINT_ENV

log = logging.getLogger("imagescene")


def _recover(args) -> int:
    from .pipeline import PipelineConfig, recover

    overrides = {
        "image": args.image,
        "depth": args.depth,
        "intrinsics": args.intrinsics,
        "mask": args.mask,
        "ground_mask": args.ground_mask,
        "background_image": args.background_image,
        "mesh_dir": args.mesh_dir,
        "output_dir": args.output_dir,
        "seed": args.seed,
        "workers": args.workers,
        "refine": False if args.no_refine else None,
    }
    for key in ("image", "depth", "intrinsics", "mask", "ground_mask", "background_image", "mesh_dir", "output_dir"):
        if overrides[key] is not None:
            overrides[key] = str(Path(overrides[key]).resolve())
    if args.config:
        cfg = PipelineConfig.load(args.config, overrides)
    else:
        cfg = PipelineConfig.from_dict({k: v for k, v in overrides.items() if v is not None}, Path.cwd())
    if args.plane_primitive:
        from dataclasses import replace

        cfg = replace(cfg, background=replace(cfg.background, use_plane_primitive=True))
    scene = recover(cfg)
    print(json.dumps({"scene": str(Path(cfg.output_dir) / "scene.json"), "objects": [o.id for o in scene.objects]}))
    return 0


def _place_robot(args) -> int:
    from .pipeline import place_robot

    candidates = place_robot(args.scene, args.profile, args.n, args.seed, args.margin, args.output)
    print(json.dumps({"placements": len(candidates), "best_clearance": candidates[0].clearance}))
    return 0


def _blend(args) -> int:
    from .compositor import BlendConfig
    from .pipeline import blend

    out = blend(
        args.scene,
        args.frames,
        args.background,
        args.output,
        BlendConfig(args.epsilon, args.export_masks),
        args.background_depth,
        args.workers,
    )
    print(json.dumps({"output": str(out)}))
    return 0


def _render(args) -> int:
    from .raster import save_color, save_depth, save_mask
    from .renderer import RenderSettings, render
    from .scene import SceneConfig

    scene = SceneConfig.load(args.scene)
    settings = RenderSettings.for_intrinsics(scene.intrinsics, shading=args.shading)
    out = render(scene, settings, include_objects=not args.no_objects, include_background=not args.no_background)
    d = Path(args.output)
    d.mkdir(parents=True, exist_ok=True)
    save_color(d / "color.png", out.color)
    save_depth(d / "depth.tiff", out.depth)
    save_mask(d / "instances.png", out.instance_mask())
    print(json.dumps({"output": str(d)}))
    return 0


def _synth(args) -> int:
    from .synth import synth_scene

    config = synth_scene(args.preset, args.seed, args.noise).write(args.output)
    print(json.dumps({"config": str(config)}))
    return 0


def _roundtrip(args) -> int:
    from .pipeline import roundtrip, roundtrip_passes

    report = roundtrip(args.preset, args.seed, args.noise, args.workdir, refine=not args.no_refine)
    report["pass"] = roundtrip_passes(report, noisy=args.noise > 0)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _props(args) -> int:
    from .properties import RemoteEstimator, estimate_properties, load_table

    client = RemoteEstimator(args.endpoint) if args.endpoint else RemoteEstimator.from_env()
    table = load_table(args.table) if args.table else None
    response = estimate_properties(args.category, client, args.context, table)
    print(json.dumps({"category": args.category, "provenance": response.provenance, **response.properties.to_dict()}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imagescene", description="Single-image scene recovery and depth-gated compositing.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="recover a scene file from image, depth, masks and meshes")
    r.add_argument("--config", help="pipeline config JSON; flags below override its fields")
    for flag in ("image", "depth", "intrinsics", "mask", "ground-mask", "background-image", "mesh-dir", "output-dir"):
        r.add_argument(f"--{flag}")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, help="threads for the multi-start registration")
    r.add_argument("--no-refine", action="store_true", help="skip the visible-surface scale/pose refinement")
    r.add_argument("--plane-primitive", action="store_true", help="mark the background as the analytic support plane")
    r.set_defaults(func=_recover)

    pr = sub.add_parser("place-robot", help="sample robot base placements for a scene")
    pr.add_argument("scene")
    pr.add_argument("--profile", default="tabletop-arm-7dof", help="preset name or profile JSON path")
    pr.add_argument("--n", type=int, default=512, help="number of sampled bases")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--margin", type=float, default=0.05, help="collision inflation in meters")
    pr.add_argument("--output", help="standalone placements file (default: placements.json next to the scene)")
    pr.set_defaults(func=_place_robot)

    b = sub.add_parser("blend", help="composite rendered frames over the background image")
    b.add_argument("scene")
    b.add_argument("--frames", required=True, help="frame directory (NNNNNN_color.png, NNNNNN_depth.tiff, ...)")
    b.add_argument("--background", required=True, help="background-only color image")
    b.add_argument("--background-depth", help="background depth raster; rendered from the scene when omitted")
    b.add_argument("--epsilon", type=float, default=0.005, help="depth margin in meters")
    b.add_argument("--export-masks", action="store_true")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--output", required=True)
    b.set_defaults(func=_blend)

    rd = sub.add_parser("render", help="render a scene file from its camera")
    rd.add_argument("scene")
    rd.add_argument("--output", required=True)
    rd.add_argument("--shading", default="vertex-color", choices=("flat", "vertex-color", "textured"))
    rd.add_argument("--no-objects", action="store_true")
    rd.add_argument("--no-background", action="store_true")
    rd.set_defaults(func=_render)

    s = sub.add_parser("synth", help="write a synthetic ground-truth scene and its recover config")
    s.add_argument("--preset", default="tabletop-basic", choices=("tabletop-basic", "tabletop-tilted", "cluttered"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0, help="depth noise sigma in meters")
    s.add_argument("--output", required=True)
    s.set_defaults(func=_synth)

    rt = sub.add_parser("roundtrip", help="synthesize, recover and compare against ground truth")
    rt.add_argument("--preset", default="tabletop-tilted", choices=("tabletop-basic", "tabletop-tilted", "cluttered"))
    rt.add_argument("--seed", type=int, default=0)
    rt.add_argument("--noise", type=float, default=0.0)
    rt.add_argument("--workdir", help="keep intermediate files here")
    rt.add_argument("--no-refine", action="store_true")
    rt.add_argument("--output", help="also write the JSON report here")
    rt.set_defaults(func=_roundtrip)

    pp = sub.add_parser("props", help=f"physical properties for a category (remote endpoint from ${ENDPOINT_ENV})")
    pp.add_argument("category")
    pp.add_argument("--context")
    pp.add_argument("--endpoint")
    pp.add_argument("--table", help="materials table JSON replacing the builtin one")
    pp.set_defaults(func=_props)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
