"""Command-line entry points: pose, background, generate, eval, serve.

Machine-readable output goes to stdout, diagnostics to stderr (via
logging; set FUTURESCENE_LOG=debug|info|warning to adjust verbosity).
Exit code is 0 iff no errors. A `--config` file of `key = value` lines
overrides built-in defaults; explicit flags win over the config.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import geom, pipeline, report, sceneio
from .errors import FuturesceneError, MissingHorizonError
from .metrics import evaluate_clip, extract_crop, read_feature_file
from .posesolve import SolverOptions, rotation_rpy
from .render import save_render
from .sceneio import load_bundle, load_output_manifest

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "mode": str,
    "horizon": float,
    "timestep": float,
    "max_iterations": int,
    "confidence_threshold": float,
    "yaw_only": lambda v: v.lower() in ("1", "true", "yes"),
    "align_first_heading": lambda v: v.lower() in ("1", "true", "yes"),
}

_DEFAULTS = {
    "mode": "appearance",
    "horizon": 1.0,
    "timestep": 0.2,
    "max_iterations": 100,
    "confidence_threshold": 0.2,
    "yaw_only": False,
    "align_first_heading": False,
}


def _setup_logging():
    level = os.environ.get("FUTURESCENE_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_config(path) -> dict:
    if path is None:
        return {}
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise FuturesceneError(f"config:{ln}: unknown key {key!r}")
        out[key] = _CONFIG_KEYS[key](value.strip())
    return out


def _effective(args, config: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return config.get(key, _DEFAULTS[key])


def _solver_options(args, config) -> SolverOptions:
    return SolverOptions(
        max_iterations=int(_effective(args, config, "max_iterations")),
        confidence_threshold=float(
            _effective(args, config, "confidence_threshold")),
        yaw_only=bool(_effective(args, config, "yaw_only")),
    )


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--confidence-threshold", dest="confidence_threshold",
                   type=float)
    p.add_argument("--yaw-only", dest="yaw_only", action="store_const",
                   const=True)
    p.add_argument("--config", default=None,
                   help="key = value file overriding defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="futurescene",
        description="Deterministic future urban scene generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pose", help="solve one vehicle pose")
    p.add_argument("bundle")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--vehicle", type=int, required=True)
    p.add_argument("--overlay", default=None,
                   help="path for the reprojection overlay image")
    _add_solver_flags(p)

    p = sub.add_parser("background", help="build and persist the background")
    p.add_argument("bundle")
    p.add_argument("--out", default=None,
                   help="output directory (default: bundle derived dir)")

    p = sub.add_parser("generate", help="generate future clips")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--vehicles", default="all",
                   help="comma-separated ids or 'all'")
    p.add_argument("--frame", type=int, default=0, help="base frame")
    p.add_argument("--mode", choices=("normals", "appearance"), default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--timestep", type=float, default=None)
    p.add_argument("--trajectory", default=None,
                   help="polyline file; one clip is generated per line")
    p.add_argument("--align-first-heading", dest="align_first_heading",
                   action="store_const", const=True)
    _add_solver_flags(p)

    p = sub.add_parser("eval", help="evaluate a generated clip")
    p.add_argument("predicted", help="clip directory (with clip.manifest)")
    p.add_argument("bundle", help="ground-truth scene bundle")
    p.add_argument("--features-dir", default=None,
                   help="dir with target_hK.feat / pred_hK.feat / prob_hK.feat")
    p.add_argument("--export-crops", default=None,
                   help="export per-vehicle tight crops (native size) for "
                        "an external feature extractor")
    p.add_argument("--out", default=None,
                   help="report directory (default: the clip directory)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--workdir", default="futurescene_sessions")
    _add_solver_flags(p)

    return parser


def cmd_pose(args) -> int:
    config = _load_config(args.config)
    bundle = load_bundle(args.bundle)
    opts = _solver_options(args, config)
    result = pipeline.solve_vehicle(bundle, args.frame, args.vehicle, opts)
    if bundle.approximate_intrinsics:
        logger.warning("approximate intrinsics in use")

    roll, pitch, yaw = rotation_rpy(result.pose.rotation)
    print(f"vehicle = {args.vehicle}")
    print(f"frame = {args.frame}")
    for i in range(3):
        row = " ".join(repr(float(v)) for v in result.pose.rotation[i])
        print(f"rotation.{i} = {row}")
    print("translation = "
          + " ".join(repr(float(v)) for v in result.pose.translation))
    print(f"roll_deg = {float(np.degrees(roll))!r}")
    print(f"pitch_deg = {float(np.degrees(pitch))!r}")
    print(f"yaw_deg = {float(np.degrees(yaw))!r}")
    print(f"residual_px = {result.final_residual!r}")
    print(f"iterations = {result.iterations}")
    print(f"converged = {str(result.converged).lower()}")
    print(f"approximate_intrinsics = "
          f"{str(bundle.approximate_intrinsics).lower()}")

    overlay = args.overlay or (Path(args.bundle) / "derived"
                               / f"pose_overlay_v{args.vehicle}"
                                 f"_f{args.frame}.png")
    _write_pose_overlay(bundle, args.frame, args.vehicle, result, overlay)
    print(f"overlay = {overlay}")
    return 0


def _write_pose_overlay(bundle, frame, vehicle_id, result, path):
    """Observed keypoints as circles, reprojected ones as crosses."""
    image = Image.fromarray(bundle.load_frame(frame)).convert("RGB")
    draw = ImageDraw.Draw(image)
    cad = bundle.cad_for(vehicle_id)
    for kp in bundle.keypoints_for(frame, vehicle_id):
        u, v = kp.position
        draw.ellipse((u - 3, v - 3, u + 3, v + 3), outline=(80, 220, 80))
        if kp.name in cad.keypoints3d:
            try:
                ru, rv = geom.project(bundle.intrinsics, result.pose,
                                      cad.keypoints3d[kp.name])
            except FuturesceneError:
                continue
            draw.line((ru - 3, rv, ru + 3, rv), fill=(240, 80, 80))
            draw.line((ru, rv - 3, ru, rv + 3), fill=(240, 80, 80))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    image.save(path)


def cmd_background(args) -> int:
    bundle = load_bundle(args.bundle)
    bg = pipeline.bundle_background(bundle)
    out = Path(args.out) if args.out else bundle.derived_dir
    img_path, mask_path = sceneio.save_background(bg.image, bg.valid_mask, out)
    print(f"background = {img_path}")
    print(f"valid_mask = {mask_path}")
    print(f"valid_fraction = {float(bg.valid_mask.mean())!r}")
    return 0


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    bundle = load_bundle(args.bundle)
    if bundle.approximate_intrinsics:
        logger.warning("approximate intrinsics in use")
    if args.vehicles == "all":
        vehicle_ids = sorted(bundle.tracks)
    elif args.vehicles.strip() == "":
        vehicle_ids = []
    else:
        vehicle_ids = [int(v) for v in args.vehicles.split(",")]

    opts = pipeline.GenerateOptions(
        mode=_effective(args, config, "mode"),
        horizon=float(_effective(args, config, "horizon")),
        timestep=float(_effective(args, config, "timestep")),
        base_frame=args.frame,
        align_first_heading=bool(
            _effective(args, config, "align_first_heading")),
        solver=_solver_options(args, config),
    )

    polylines = [None]
    if args.trajectory:
        polylines = sceneio.read_polylines(args.trajectory)

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    background = pipeline.bundle_background(bundle)
    sceneio.save_background(background.image, background.valid_mask, out_root)

    solved = {}
    for n, polyline in enumerate(polylines):
        clip_id = f"clip_{n:03d}"
        clip = pipeline.generate_clip(
            bundle, vehicle_ids, opts, polyline=polyline,
            background=background, clip_id=clip_id, solved=solved)
        manifest = sceneio.write_outputs(clip.frames, clip.manifest,
                                         out_root / clip_id)
        renders_dir = out_root / clip_id / "renders"
        renders_dir.mkdir(exist_ok=True)
        for k, step in enumerate(clip.renders):
            for crop in step:
                save_render(crop, renders_dir
                            / f"f{k:03d}_v{crop.vehicle_id}")
        print(f"clip.{n}.dir = {out_root / clip_id}")
        print(f"clip.{n}.frames = {len(manifest.frames)}")
        for plan in manifest.plans:
            print(f"clip.{n}.vehicle.{plan.vehicle_id}.residual = "
                  f"{plan.residual!r}")
            print(f"clip.{n}.vehicle.{plan.vehicle_id}.yaw_delta_deg = "
                  f"{plan.yaw_delta_deg!r}")
    print(f"clips = {len(polylines)}")
    return 0


def cmd_eval(args) -> int:
    clip_dir = Path(args.predicted)
    manifest = load_output_manifest(clip_dir)
    bundle = load_bundle(args.bundle)
    if manifest.approximate_intrinsics or bundle.approximate_intrinsics:
        logger.warning("approximate intrinsics in use")

    predicted = [sceneio.load_image(clip_dir / ref.path)
                 for ref in manifest.frames]
    gt = []
    for ref in manifest.frames:
        if ref.frame_index not in bundle.frames:
            raise MissingHorizonError(
                f"bundle has no frame {ref.frame_index} for offset "
                f"+{ref.offset:.1f}s"
            )
        gt.append(bundle.load_frame(ref.frame_index))
    offsets = [ref.offset for ref in manifest.frames]
    frame_indices = [ref.frame_index for ref in manifest.frames]
    tracks = [(track, frame_indices) for track in bundle.tracks.values()]

    features = None
    probabilities = None
    if args.features_dir:
        fdir = Path(args.features_dir)
        features, probabilities = {}, {}
        for k, offset in enumerate(offsets, start=1):
            tgt = fdir / f"target_h{k}.feat"
            prd = fdir / f"pred_h{k}.feat"
            prb = fdir / f"prob_h{k}.feat"
            if tgt.exists() and prd.exists():
                features[offset] = (read_feature_file(tgt),
                                    read_feature_file(prd))
            if prb.exists():
                # float32 quantization breaks exact row sums; renormalize
                rows = read_feature_file(prb)
                probabilities[offset] = rows / rows.sum(axis=1, keepdims=True)

    if args.export_crops:
        crops_root = Path(args.export_crops)
        for k, (ref, pframe, gframe) in enumerate(
                zip(manifest.frames, predicted, gt), start=1):
            crop_dir = crops_root / f"h{k}"
            crop_dir.mkdir(parents=True, exist_ok=True)
            for track in bundle.tracks.values():
                entry = track.entry_at(ref.frame_index)
                if entry is None:
                    continue
                sceneio.save_image(
                    extract_crop(gframe, entry.bbox),
                    crop_dir / f"target_v{track.vehicle_id}.png")
                sceneio.save_image(
                    extract_crop(pframe, entry.bbox),
                    crop_dir / f"pred_v{track.vehicle_id}.png")
        print(f"crops_dir = {crops_root}")

    clip_report = evaluate_clip(predicted, gt, tracks, offsets,
                                features=features,
                                probabilities=probabilities)
    out_dir = Path(args.out) if args.out else clip_dir
    paths = report.write_report_files(clip_report, out_dir)
    sys.stderr.write(report.format_tables(clip_report) + "\n")
    for line in report.key_value_lines(clip_report):
        print(line)
    print(f"report_text = {paths['text']}")
    print(f"report_csv = {paths['csv']}")
    print(f"report_figure = {paths['figure']}")
    if manifest.approximate_intrinsics:
        print("approximate_intrinsics = true")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .httpd import create_app

    config = _load_config(args.config)
    app = create_app(Path(args.workdir), solver=_solver_options(args, config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "pose": cmd_pose,
    "background": cmd_background,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FuturesceneError as exc:
        logger.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
