"""Ground-plane trajectories and future pose planning.

Tracks are lifted through the homography to world meters; user polylines
are lifted and resampled by arc length. Planning turns consecutive world
displacements into rigid steps: each step rotates by the heading change
about the previous trajectory point (world z axis) and translates to the
next point, is conjugated into the camera frame through the extrinsics,
and is composed onto the previous target pose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import HorizonExceedsTrajectoryError

logger = logging.getLogger(__name__)

STATIONARY_STEP = 1e-4  # meters; below this the previous heading carries over


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered (t, x, y) samples on the ground plane, t strictly increasing."""

    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1).copy()
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2).copy()
        if t.shape[0] != xy.shape[0] or t.shape[0] < 1:
            raise ValueError("trajectory needs matching, non-empty t and xy")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must strictly increase")
        t.flags.writeable = False
        xy.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)

    def __len__(self):
        return self.t.shape[0]

    def sample(self, at: float) -> np.ndarray:
        """Linear interpolation; only valid inside the covered range."""
        if len(self) == 1:
            return self.xy[0].copy()
        return np.array([
            np.interp(at, self.t, self.xy[:, 0]),
            np.interp(at, self.t, self.xy[:, 1]),
        ])

    def translated(self, offset) -> "Trajectory":
        return Trajectory(self.t, self.xy + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True)
class TrackEntry:
    frame: int
    bbox: tuple          # x, y, w, h in pixels
    confidence: float = 1.0


@dataclass(frozen=True)
class VehicleTrack:
    """Per-frame bounding boxes for one tracked vehicle."""

    vehicle_id: int
    entries: tuple

    def __post_init__(self):
        frames = [e.frame for e in self.entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track frame indices must strictly increase")
        object.__setattr__(self, "entries", tuple(self.entries))

    def entry_at(self, frame: int) -> TrackEntry | None:
        for e in self.entries:
            if e.frame == frame:
                return e
        return None

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class FuturePlan:
    """The target roto-translation sequence for one vehicle."""

    vehicle_id: int
    source_pose: geom.Pose
    target_poses: tuple              # ((t_offset, Pose), ...)
    horizon: float
    timestep: float

    def __post_init__(self):
        if abs(self.horizon - self.timestep * len(self.target_poses)) > 1e-9:
            raise ValueError("horizon must equal timestep * pose count")


@dataclass(frozen=True)
class PlanOptions:
    horizon: float = 1.0
    timestep: float = 0.2
    align_first_heading: bool = False
    initial_heading: float | None = None
    smooth_headings: bool = False    # 3-sample moving average


def bbox_bottom_center(bbox) -> tuple:
    x, y, w, h = bbox
    return (x + w / 2.0, y + h)


def lift_track(track: VehicleTrack, h: geom.GroundHomography,
               fps: float) -> Trajectory:
    """Lift each bounding-box bottom-center to the ground plane; the
    timestamp of frame k is k / fps."""
    if len(track) == 0:
        raise ValueError("track is empty")
    t = np.array([e.frame / fps for e in track.entries])
    xy = np.array([
        geom.lift_ground_point(h, bbox_bottom_center(e.bbox))
        for e in track.entries
    ])
    return Trajectory(t, xy)


def resample_user_polyline(polyline, h: geom.GroundHomography,
                           horizon: float, timestep: float) -> Trajectory:
    """Lift a drawn pixel polyline and resample it by arc length.

    The result has horizon/timestep + 1 samples (t = 0 included) at
    constant speed total_length / horizon. A degenerate polyline (total
    lifted length < 1e-6 m) yields a stationary trajectory on the same
    time grid.
    """
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("polyline needs at least 2 points")
    n = _integral_steps(horizon, timestep)
    world = np.array([geom.lift_ground_point(h, p) for p in pts])
    seg = np.linalg.norm(np.diff(world, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    times = timestep * np.arange(n + 1)
    if total < 1e-6:
        return Trajectory(times, np.repeat(world[:1], n + 1, axis=0))
    targets = np.minimum(np.arange(n + 1) * (total / n), total)
    xs = np.interp(targets, cum, world[:, 0])
    ys = np.interp(targets, cum, world[:, 1])
    return Trajectory(times, np.column_stack([xs, ys]))


def _integral_steps(horizon: float, timestep: float) -> int:
    if timestep <= 0 or horizon <= 0:
        raise ValueError("horizon and timestep must be positive")
    n = horizon / timestep
    if abs(n - round(n)) > 1e-9:
        raise ValueError("horizon must be an integer multiple of timestep")
    return int(round(n))


def _wrap_angle(a: float) -> float:
    return float(np.arctan2(np.sin(a), np.cos(a)))


def world_yaw(pose: geom.Pose, extrinsics: geom.Pose) -> float:
    """World-frame heading of a vehicle pose: angle of the object +x axis
    projected on the ground plane."""
    rw = extrinsics.rotation.T @ pose.rotation
    fwd = rw[:, 0]
    return float(np.arctan2(fwd[1], fwd[0]))


def plan_future(source: geom.Pose, trajectory: Trajectory,
                extrinsics: geom.Pose, opts: PlanOptions | None = None,
                vehicle_id: int = 0) -> FuturePlan:
    """Build the target pose sequence along a trajectory.

    Headings come from the displacement of each step; steps shorter than
    1e-4 m carry the previous heading forward so stationary vehicles do
    not spin. The first step's reference heading is the first segment's
    own heading (zero initial turn) unless `initial_heading` is given or
    `align_first_heading` snaps the vehicle's solved yaw to the path.

    Raises:
        HorizonExceedsTrajectoryError: trajectory too short in time.
    """
    opts = opts or PlanOptions()
    n = _integral_steps(opts.horizon, opts.timestep)
    t0 = float(trajectory.t[0])
    t_end = float(trajectory.t[-1])
    if t0 + opts.horizon > t_end + 1e-9 and len(trajectory) > 1:
        raise HorizonExceedsTrajectoryError(
            f"trajectory covers {t_end - t0:.3f} s, horizon {opts.horizon} s"
        )
    if len(trajectory) == 1:
        positions = np.repeat(trajectory.xy[:1], n + 1, axis=0)
    else:
        positions = np.array([
            trajectory.sample(t0 + k * opts.timestep) for k in range(n + 1)
        ])

    deltas = np.diff(positions, axis=0)
    norms = np.linalg.norm(deltas, axis=1)
    headings = np.zeros(n)
    moving = norms >= STATIONARY_STEP
    prev = opts.initial_heading
    if prev is None:
        if moving.any():
            first_moving = deltas[moving][0]
            prev = float(np.arctan2(first_moving[1], first_moving[0]))
        else:
            prev = 0.0
    first_reference = prev
    for k in range(n):
        if moving[k]:
            prev = float(np.arctan2(deltas[k, 1], deltas[k, 0]))
        headings[k] = prev
    if opts.smooth_headings and n >= 3:
        unwrapped = np.unwrap(headings)
        smoothed = unwrapped.copy()
        smoothed[1:-1] = (unwrapped[:-2] + unwrapped[1:-1] + unwrapped[2:]) / 3.0
        headings = smoothed

    turns = np.zeros(n)
    if n > 0:
        if opts.align_first_heading:
            turns[0] = _wrap_angle(headings[0] - world_yaw(source, extrinsics))
        else:
            turns[0] = _wrap_angle(headings[0] - first_reference)
        for k in range(1, n):
            turns[k] = _wrap_angle(headings[k] - headings[k - 1])

    inv_e = geom.invert(extrinsics)
    poses = []
    current = source
    for k in range(n):
        delta = deltas[k]
        if turns[k] == 0.0 and delta[0] == 0.0 and delta[1] == 0.0:
            poses.append((float((k + 1) * opts.timestep), current))
            continue
        rz = geom.axis_angle_to_rotation((0.0, 0.0, turns[k]))
        prev_p = np.array([positions[k, 0], positions[k, 1], 0.0])
        next_p = np.array([positions[k + 1, 0], positions[k + 1, 1], 0.0])
        step = geom.Pose(rz, next_p - rz @ prev_p)
        cam_step = geom.compose(geom.compose(extrinsics, step), inv_e)
        current = geom.compose(cam_step, current)
        poses.append((float((k + 1) * opts.timestep), current))
    return FuturePlan(vehicle_id, source, tuple(poses),
                      n * opts.timestep, opts.timestep)
