"""End-to-end generation: solve -> plan -> render -> composite.

Shared by the CLI and the HTTP service. Vehicles whose pose solve fails
are skipped with a warning (a missing detection should not abort the
whole clip); everything else is deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom, sceneio
from .errors import FuturesceneError, InsufficientCorrespondencesError
from .posesolve import (
    Correspondences,
    SolveReport,
    SolverOptions,
    ground_plane_seeds,
    solve_pnp,
)
from .render import (
    RenderedCrop,
    bake_appearance,
    fit_viewport,
    render_appearance,
    render_normal_sketch,
)
from .scenecomp import BackgroundModel, build_background, composite, \
    masks_from_tracks
from .sceneio import (
    ClipFrameRef,
    OutputManifest,
    PlanSummary,
    SceneBundle,
)
from .traj import (
    PlanOptions,
    VehicleTrack,
    lift_track,
    plan_future,
    resample_user_polyline,
    world_yaw,
)

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"


def solve_vehicle(bundle: SceneBundle, frame: int, vehicle_id: int,
                  opts: SolverOptions | None = None) -> SolveReport:
    """Solve the source pose of one vehicle at one frame, seeding the
    multi-start from its bounding box on the ground plane."""
    opts = opts or SolverOptions()
    keypoints = bundle.keypoints_for(frame, vehicle_id)
    if not keypoints:
        raise InsufficientCorrespondencesError(
            f"no keypoints for vehicle {vehicle_id} at frame {frame}"
        )
    cad = bundle.cad_for(vehicle_id)
    corr = Correspondences.match(keypoints, cad.keypoints3d)
    track = bundle.tracks.get(vehicle_id)
    entry = track.entry_at(frame) if track else None
    if entry is not None and not opts.seed_poses:
        try:
            seeds = ground_plane_seeds(entry.bbox, bundle.homography,
                                       bundle.intrinsics)
            opts = replace(opts, seed_poses=tuple(seeds))
        except FuturesceneError as exc:
            logger.warning("ground seeding failed (%s); falling back", exc)
    return solve_pnp(corr, bundle.intrinsics, opts=opts)


def bundle_background(bundle: SceneBundle) -> BackgroundModel:
    """Median background over all bundle frames with track-box masks."""
    indices = bundle.frame_indices()
    frames = [bundle.load_frame(k) for k in indices]
    height, width = frames[0].shape[:2]
    masks = masks_from_tracks(bundle.tracks.values(), indices, height, width)
    return build_background(frames, masks)


@dataclass(frozen=True)
class GenerateOptions:
    mode: str = "appearance"          # or "normals"
    horizon: float = 1.0
    timestep: float = 0.2
    base_frame: int = 0
    align_first_heading: bool = False
    per_pixel_depth: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "horizon": self.horizon,
            "timestep": self.timestep,
            "base_frame": self.base_frame,
            "align_first_heading": self.align_first_heading,
            "per_pixel_depth": self.per_pixel_depth,
            "max_iterations": self.solver.max_iterations,
            "confidence_threshold": self.solver.confidence_threshold,
            "yaw_only": self.solver.yaw_only,
        }


@dataclass(eq=False)
class GeneratedClip:
    clip_id: str
    frames: list                      # composited uint8 frames
    manifest: OutputManifest
    plans: dict                       # vehicle_id -> FuturePlan
    renders: tuple = ()               # per step: tuple of RenderedCrop


def generate_clip(bundle: SceneBundle, vehicle_ids, opts: GenerateOptions,
                  polyline=None, background: BackgroundModel | None = None,
                  clip_id: str = "clip_000",
                  solved: dict | None = None) -> GeneratedClip:
    """Generate one future clip.

    With a polyline, every selected vehicle follows it (resampled by arc
    length); otherwise each vehicle follows its own lifted track from the
    base frame onward. `solved` can carry cached SolveReports keyed by
    (frame, vehicle_id).

    Vehicles that fail to solve are skipped with a warning.
    """
    if opts.mode not in ("normals", "appearance"):
        raise ValueError(f"unknown render mode {opts.mode!r}")
    background = background or bundle_background(bundle)
    extr = geom.decompose_homography(bundle.intrinsics, bundle.homography)
    n_steps = int(round(opts.horizon / opts.timestep))
    base_image = None

    plans = {}
    renders_per_step = [[] for _ in range(n_steps)]
    plan_rows = []
    for vid in vehicle_ids:
        key = (opts.base_frame, vid)
        try:
            report = solved[key] if solved and key in solved else \
                solve_vehicle(bundle, opts.base_frame, vid, opts.solver)
        except FuturesceneError as exc:
            logger.warning("vehicle %d skipped: pose solve failed (%s)",
                           vid, exc)
            continue
        if polyline is not None:
            trajectory = resample_user_polyline(
                polyline, bundle.homography, opts.horizon, opts.timestep)
        else:
            track = bundle.tracks[vid]
            tail = tuple(e for e in track.entries
                         if e.frame >= opts.base_frame)
            trajectory = lift_track(
                VehicleTrack(vid, tail), bundle.homography, bundle.fps)
        plan = plan_future(
            report.pose, trajectory, extr,
            PlanOptions(horizon=opts.horizon, timestep=opts.timestep,
                        align_first_heading=opts.align_first_heading),
            vehicle_id=vid)
        plans[vid] = plan

        cad = bundle.cad_for(vid)
        baked = None
        if opts.mode == "appearance":
            if base_image is None:
                base_image = bundle.load_frame(opts.base_frame)
            baked = bake_appearance(cad, base_image, report.pose,
                                    bundle.intrinsics,
                                    source_crop_ref=f"frame:{opts.base_frame}")
        for k, (_, pose) in enumerate(plan.target_poses):
            vp = fit_viewport(cad, pose, bundle.intrinsics)
            if vp is None:
                logger.warning("vehicle %d leaves the view at step %d",
                               vid, k + 1)
                continue
            if opts.mode == "normals":
                crop = RenderedCrop.from_sketch(
                    render_normal_sketch(cad, pose, bundle.intrinsics, vp),
                    vid)
            else:
                crop = render_appearance(cad, baked, pose, bundle.intrinsics,
                                         vp, vehicle_id=vid)
            renders_per_step[k].append(crop)

        yaw_delta = world_yaw(plan.target_poses[-1][1], extr) \
            - world_yaw(report.pose, extr)
        yaw_delta = float(np.degrees(np.arctan2(np.sin(yaw_delta),
                                                np.cos(yaw_delta))))
        plan_rows.append(PlanSummary(
            vehicle_id=vid, cad_id=bundle.cad_assignments.get(vid, 1),
            residual=report.final_residual, iterations=report.iterations,
            yaw_delta_deg=yaw_delta, n_poses=len(plan.target_poses)))

    frames = []
    frame_refs = []
    for k in range(n_steps):
        frame = composite(background, renders_per_step[k],
                          per_pixel_depth=opts.per_pixel_depth)
        frames.append(frame.image)
        offset = (k + 1) * opts.timestep
        frame_refs.append(ClipFrameRef(
            path=f"frame_{k:03d}.png",
            offset=offset,
            frame_index=opts.base_frame + int(round(offset * bundle.fps)),
            placed=tuple(
                (vid, vp.x0, vp.y0, vp.width, vp.height, float(d))
                for vid, vp, d in frame.placed
            )))

    manifest = OutputManifest(
        clip_id=clip_id,
        base_frame=opts.base_frame,
        timestep=opts.timestep,
        horizon=opts.horizon,
        mode=opts.mode,
        tool_version=TOOL_VERSION,
        options_hash=sceneio.options_hash(opts.as_dict()),
        approximate_intrinsics=bundle.approximate_intrinsics,
        frames=tuple(frame_refs),
        plans=tuple(plan_rows),
    )
    return GeneratedClip(clip_id=clip_id, frames=frames, manifest=manifest,
                         plans=plans,
                         renders=tuple(tuple(r) for r in renders_per_step))
