"""Deterministic synthetic scene bundles.

Builds a small traffic scene entirely from this package's own geometry:
an elevated camera, a procedural road plate, and one car driving through
the view. Frames are rendered with the normal-sketch shader, tracks come
from the render alpha, keypoints are exact projections. The result is a
fully valid bundle for demos and for the end-to-end acceptance suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geom, sceneio
from .carshapes import builtin_cad
from .posesolve import KEYPOINT_NAMES, Keypoint2D
from .render import RenderedCrop, fit_viewport, render_normal_sketch
from .scenecomp import BackgroundModel, composite
from .sceneio import FRAME_PATTERN, MANIFEST_NAME
from .traj import TrackEntry, VehicleTrack

logger = logging.getLogger(__name__)

FRAME_W, FRAME_H = 320, 180
FPS = 10.0


def demo_intrinsics() -> geom.CameraIntrinsics:
    return geom.CameraIntrinsics(300.0, 300.0, 160.0, 90.0, FRAME_W, FRAME_H)


def demo_extrinsics() -> geom.Pose:
    """Camera 7 m above the ground, looking down the road."""
    cam_pos = np.array([0.0, -10.0, 7.0])
    target = np.array([0.0, 8.0, 0.0])
    fwd = target - cam_pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = geom.nearest_rotation(np.stack([right, down, fwd]))
    return geom.Pose(r, -(r @ cam_pos))


def road_plate(seed: int = 20) -> np.ndarray:
    """Static plate: graded ground, road band, dashed center line."""
    rng = np.random.default_rng(seed)
    img = np.zeros((FRAME_H, FRAME_W, 3), dtype=np.float64)
    rows = np.linspace(60.0, 110.0, FRAME_H)[:, None]
    img[..., 0] = rows + 6.0
    img[..., 1] = rows + 10.0
    img[..., 2] = rows
    img[60:150] = (74.0, 76.0, 82.0)            # asphalt band
    for x0 in range(10, FRAME_W, 40):           # dashed lane line
        img[103:107, x0:x0 + 18] = (196.0, 190.0, 120.0)
    img += rng.normal(0.0, 2.0, size=img.shape) # mild static texture
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def car_world_pose(cad, x: float, y: float, yaw: float) -> geom.Pose:
    """World pose standing the car on the ground plane at (x, y)."""
    lift = -float(cad.vertices[:, 2].min())
    return geom.Pose(geom.axis_angle_to_rotation((0.0, 0.0, yaw)),
                     (x, y, lift))


@dataclass(frozen=True)
class DemoScene:
    intrinsics: geom.CameraIntrinsics
    extrinsics: geom.Pose
    homography: geom.GroundHomography
    plate: np.ndarray
    poses: tuple           # per-frame camera-frame vehicle poses
    vehicle_id: int
    cad_id: int


def build_demo_scene(n_frames: int = 10) -> DemoScene:
    intr = demo_intrinsics()
    extr = demo_extrinsics()
    h = geom.homography_from_extrinsics(intr, extr)
    cad = builtin_cad(1)
    poses = []
    for k in range(n_frames):
        world = car_world_pose(cad, -5.0 + 0.9 * k, 4.0, 0.0)
        poses.append(geom.compose(extr, world))
    return DemoScene(intr, extr, h, road_plate(), tuple(poses),
                     vehicle_id=3, cad_id=1)


def write_demo_bundle(path, n_frames: int = 10,
                      with_intrinsics: bool = True) -> Path:
    """Write a complete synthetic bundle; returns its root directory."""
    scene = build_demo_scene(n_frames)
    root = Path(path)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    cad = builtin_cad(scene.cad_id)
    bg = BackgroundModel(image=scene.plate,
                         valid_mask=np.ones(scene.plate.shape[:2], bool),
                         sample_counts=np.ones(scene.plate.shape[:2], np.int32))

    entries = []
    keypoints = {}
    for k, pose in enumerate(scene.poses):
        vp = fit_viewport(cad, pose, scene.intrinsics, margin=4)
        sketch = render_normal_sketch(cad, pose, scene.intrinsics, vp)
        frame = composite(
            bg, [RenderedCrop.from_sketch(sketch, scene.vehicle_id)]
        ).image
        sceneio.save_image(frame, frames_dir / FRAME_PATTERN.format(k))

        ys, xs = np.nonzero(sketch.alpha)
        x0 = vp.x0 + xs.min()
        y0 = vp.y0 + ys.min()
        bbox = (float(x0), float(y0),
                float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))
        entries.append(TrackEntry(k, bbox, 1.0))
        keypoints[(k, scene.vehicle_id)] = tuple(
            Keypoint2D(n, geom.project(scene.intrinsics, pose,
                                       cad.keypoints3d[n]))
            for n in KEYPOINT_NAMES
        )

    tracks = {scene.vehicle_id: VehicleTrack(scene.vehicle_id, tuple(entries))}
    sceneio.write_tracks_csv(tracks, root / "tracks.csv")
    sceneio.write_keypoints_csv(keypoints, root / "keypoints.csv")
    sceneio.write_homography(scene.homography, root / "homography.txt")
    sceneio.write_cad_assignments({scene.vehicle_id: scene.cad_id},
                                  root / "cads.csv")
    manifest = [
        ("frames_dir", "frames"),
        ("tracks", "tracks.csv"),
        ("keypoints", "keypoints.csv"),
        ("homography", "homography.txt"),
        ("cad_assignments", "cads.csv"),
        ("fps", repr(FPS)),
        ("timestep", "0.2"),
        ("horizon", "1.0"),
    ]
    if with_intrinsics:
        sceneio.write_intrinsics(scene.intrinsics, root / "intrinsics.txt")
        manifest.insert(4, ("intrinsics", "intrinsics.txt"))
    (root / MANIFEST_NAME).write_text(
        "# synthetic scene bundle\n"
        + "\n".join(f"{k} = {v}" for k, v in manifest) + "\n"
    )
    write_demo_polylines(root, scene)
    return root


def _world_points_to_polyline(scene: DemoScene, world_pts) -> list:
    return [tuple(float(v) for v in geom.ground_to_pixel(scene.homography, p))
            for p in world_pts]


def quarter_turn_world(start_xy, step: float = 0.8, n: int = 5,
                       total_deg: float = 90.0) -> np.ndarray:
    """Waypoints whose segment headings sweep 0..total_deg in equal
    increments with equal segment lengths, so the planned net heading
    change is exactly total_deg."""
    pts = [np.asarray(start_xy, dtype=np.float64)]
    for k in range(n):
        heading = np.deg2rad(total_deg * k / (n - 1))
        pts.append(pts[-1] + step * np.array([np.cos(heading),
                                              np.sin(heading)]))
    return np.array(pts)


def _write_polyline_file(path: Path, polylines) -> None:
    lines = ["# one polyline per line: u,v pairs"]
    for poly in polylines:
        lines.append(" ".join(f"{p[0]!r},{p[1]!r}" for p in poly))
    path.write_text("\n".join(lines) + "\n")


def write_demo_polylines(root: Path, scene: DemoScene) -> None:
    """Polyline files used by the demo and the acceptance suite."""
    start_world = np.array([-5.0, 4.0])

    stationary_px = _world_points_to_polyline(
        scene, [start_world, start_world])
    turn_world = quarter_turn_world(start_world)
    turn_px = _world_points_to_polyline(scene, turn_world)
    straight_world = [start_world + (4.0 * k / 5.0) * np.array([1.0, 0.0])
                      for k in range(6)]
    straight_px = _world_points_to_polyline(scene, straight_world)
    right_world = quarter_turn_world(start_world, total_deg=-90.0)
    right_px = _world_points_to_polyline(scene, right_world)

    _write_polyline_file(root / "polyline_stationary.txt", [stationary_px])
    _write_polyline_file(root / "polyline_quarter_turn.txt", [turn_px])
    _write_polyline_file(root / "polylines_three_futures.txt",
                         [straight_px, turn_px, right_px])
