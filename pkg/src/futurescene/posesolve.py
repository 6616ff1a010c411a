"""Vehicle pose recovery from 2D/3D keypoint correspondences.

The source roto-translation of a vehicle is found by damped least squares
(Levenberg-Marquardt) on the pixel reprojection residual, parameterized
as axis-angle rotation plus translation. Initialization is multi-start:
a direct linear transform estimate when enough points are available,
optional ground-plane seeds (vehicle assumed upright on the road), and a
coarse orientation grid as a last resort.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import geom
from .errors import (
    DegenerateConfigurationError,
    DivergenceError,
    InsufficientCorrespondencesError,
    PointBehindCameraError,
)

logger = logging.getLogger(__name__)


class KeypointName(str, Enum):
    """The 12 vehicle keypoints: wheels, lights, windshield corners."""

    WHEEL_FL = "wheel_fl"
    WHEEL_FR = "wheel_fr"
    WHEEL_RL = "wheel_rl"
    WHEEL_RR = "wheel_rr"
    LIGHT_FL = "light_fl"
    LIGHT_FR = "light_fr"
    LIGHT_RL = "light_rl"
    LIGHT_RR = "light_rr"
    WINDSHIELD_TL = "windshield_tl"
    WINDSHIELD_TR = "windshield_tr"
    REAR_WINDOW_TL = "rear_window_tl"
    REAR_WINDOW_TR = "rear_window_tr"


KEYPOINT_NAMES = tuple(k.value for k in KeypointName)


@dataclass(frozen=True)
class Keypoint2D:
    """A named detection in pixel coordinates."""

    name: str
    position: np.ndarray
    confidence: float = 1.0
    visible: bool = True

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(2).copy()
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"keypoint {self.name}: position not finite")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"keypoint {self.name}: confidence outside [0, 1]")
        KeypointName(self.name)  # must be one of the 12


@dataclass(frozen=True)
class Correspondence:
    keypoint: Keypoint2D
    point3d: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point3d, dtype=np.float64).reshape(3).copy()
        p.flags.writeable = False
        object.__setattr__(self, "point3d", p)


@dataclass(frozen=True)
class Correspondences:
    """2D keypoints paired with object-frame 3D points, unique by name."""

    pairs: tuple

    def __post_init__(self):
        names = [c.keypoint.name for c in self.pairs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate keypoint names in correspondences")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @classmethod
    def match(cls, keypoints, keypoints3d: dict) -> "Correspondences":
        """Pair detections with a CAD's named 3D keypoints."""
        pairs = [
            Correspondence(kp, keypoints3d[kp.name])
            for kp in keypoints
            if kp.name in keypoints3d
        ]
        return cls(tuple(pairs))

    def visible(self) -> "Correspondences":
        return Correspondences(
            tuple(c for c in self.pairs if c.keypoint.visible)
        )

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class SolverOptions:
    """Levenberg-Marquardt knobs; defaults follow the stop criteria and
    damping schedule documented in the README."""

    max_iterations: int = 100
    residual_tol: float = 1e-8       # absolute decrease of mean px error
    gradient_tol: float = 1e-10      # infinity norm of J^T r
    lambda0: float = 1e-3
    lambda_max: float = 1e8
    confidence_threshold: float = 0.2
    yaw_only: bool = False
    confidence_weighting: bool = True
    seed_poses: tuple = ()


@dataclass(frozen=True)
class SolveReport:
    """Result of one pose solve."""

    pose: geom.Pose
    final_residual: float            # mean reprojection error, pixels
    iterations: int
    converged: bool
    per_point_residuals: tuple

    def __post_init__(self):
        if self.final_residual < 0:
            raise ValueError("residual must be non-negative")


def residual_and_jacobian(c: Correspondences, intr: geom.CameraIntrinsics,
                          params: np.ndarray, weighted: bool = True):
    """Reprojection residual and its analytic Jacobian.

    params is the 6-vector [axis-angle | translation]. Residual rows come
    in (du, dv) pairs per visible correspondence, scaled by
    sqrt(confidence) when `weighted`. The rotation derivative follows the
    compact exponential-coordinates formula (d(R p)/d v_i evaluated at the
    global parameter, not a local perturbation).

    Raises:
        PointBehindCameraError: a visible point has depth <= 1e-9.
    """
    params = np.asarray(params, dtype=np.float64).reshape(6)
    pairs = [p for p in c.pairs if p.keypoint.visible]
    n = len(pairs)
    v, t = params[:3], params[3:]
    rot = geom.axis_angle_to_rotation(v)

    pts = np.array([p.point3d for p in pairs])            # (n, 3)
    obs = np.array([p.keypoint.position for p in pairs])  # (n, 2)
    weights = np.sqrt([p.keypoint.confidence for p in pairs]) if weighted \
        else np.ones(n)

    q = pts @ rot.T + t
    z = q[:, 2]
    if np.any(z <= geom.MIN_DEPTH):
        raise PointBehindCameraError("correspondence point behind camera")

    pred = np.column_stack(
        (intr.fx * q[:, 0] / z + intr.cx, intr.fy * q[:, 1] / z + intr.cy)
    )
    res = np.empty(2 * n)
    res[0::2] = weights * (pred[:, 0] - obs[:, 0])
    res[1::2] = weights * (pred[:, 1] - obs[:, 1])

    # d(pixel)/d(camera point)
    du_dq = np.zeros((n, 3))
    dv_dq = np.zeros((n, 3))
    du_dq[:, 0] = intr.fx / z
    du_dq[:, 2] = -intr.fx * q[:, 0] / z ** 2
    dv_dq[:, 1] = intr.fy / z
    dv_dq[:, 2] = -intr.fy * q[:, 1] / z ** 2

    # d(camera point)/d(axis-angle), one 3x3 per component
    dq_dv = _rotation_point_derivatives(v, rot, pts)      # (3, n, 3)

    jac = np.zeros((2 * n, 6))
    for i in range(3):
        jac[0::2, i] = np.einsum("nk,nk->n", du_dq, dq_dv[i])
        jac[1::2, i] = np.einsum("nk,nk->n", dv_dq, dq_dv[i])
    jac[0::2, 3:] = du_dq
    jac[1::2, 3:] = dv_dq
    jac *= np.repeat(weights, 2)[:, None]
    return res, jac


def _rotation_point_derivatives(v, rot, pts):
    """d(R(v) p)/dv_i for all points; (3, n, 3) array."""
    theta2 = float(v @ v)
    n = pts.shape[0]
    out = np.zeros((3, n, 3))
    if theta2 < 1e-16:
        # limit at v = 0: derivative is e_i x p
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = np.cross(np.broadcast_to(e, pts.shape), pts)
        return out
    vx = _skew(v)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        w = np.cross(v, (np.eye(3) - rot) @ e)
        d = ((v[i] * vx + _skew(w)) / theta2) @ rot
        out[i] = pts @ d.T
    return out


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def mean_pixel_error(c: Correspondences, intr, params) -> tuple:
    """Unweighted per-point pixel errors and their mean."""
    params = np.asarray(params, dtype=np.float64).reshape(6)
    pairs = [p for p in c.pairs if p.keypoint.visible]
    rot = geom.axis_angle_to_rotation(params[:3])
    pts = np.array([p.point3d for p in pairs])
    obs = np.array([p.keypoint.position for p in pairs])
    q = pts @ rot.T + params[3:]
    z = q[:, 2]
    if np.any(z <= geom.MIN_DEPTH):
        raise PointBehindCameraError("correspondence point behind camera")
    du = intr.fx * q[:, 0] / z + intr.cx - obs[:, 0]
    dv = intr.fy * q[:, 1] / z + intr.cy - obs[:, 1]
    per_point = np.hypot(du, dv)
    return per_point, float(per_point.mean())


def _params_from_pose(pose: geom.Pose, yaw_only: bool) -> np.ndarray:
    v = geom.rotation_to_axis_angle(pose.rotation)
    if yaw_only:
        # keep only the camera-z component so roll and pitch stay 0
        v = np.array([0.0, 0.0, v[2]])
    return np.concatenate([v, pose.translation])


def _pose_from_params(params: np.ndarray) -> geom.Pose:
    return geom.Pose(geom.axis_angle_to_rotation(params[:3]), params[3:])


@dataclass
class _LmResult:
    params: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_trace: tuple = ()   # accepted weighted squared residuals, in order


def _lm_minimize(c, intr, params0, opts: SolverOptions) -> _LmResult:
    """Damped least squares with multiplicative damping schedule.

    Accepts a step only if the weighted squared residual decreases, so
    the accepted cost sequence is non-increasing. Stops on any of: small
    mean-residual decrease, small gradient, damping blow-up, or the
    iteration cap (only the cap counts as non-convergence).
    """
    free = [2, 3, 4, 5] if opts.yaw_only else [0, 1, 2, 3, 4, 5]
    params = params0.copy()
    weighted = opts.confidence_weighting
    res, jac = residual_and_jacobian(c, intr, params, weighted)
    if not np.all(np.isfinite(res)):
        raise DivergenceError("non-finite residual at start")
    cost = float(res @ res)
    _, mean_err = mean_pixel_error(c, intr, params)
    lam = opts.lambda0
    iterations = 0
    converged = False
    trace = [cost]

    for _ in range(opts.max_iterations):
        g = jac.T @ res
        if np.abs(g[free]).max() < opts.gradient_tol:
            converged = True
            break
        jtj = jac.T @ jac
        a = jtj[np.ix_(free, free)] + lam * np.eye(len(free))
        try:
            delta = np.linalg.solve(a, -g[free])
        except np.linalg.LinAlgError:
            lam *= 10.0
            iterations += 1
            if lam > opts.lambda_max:
                converged = True
                break
            continue
        trial = params.copy()
        trial[free] += delta
        iterations += 1
        try:
            trial_res, trial_jac = residual_and_jacobian(c, intr, trial, weighted)
            trial_cost = float(trial_res @ trial_res)
        except PointBehindCameraError:
            trial_cost = np.inf
        if np.isfinite(trial_cost) and trial_cost < cost:
            params, res, jac, cost = trial, trial_res, trial_jac, trial_cost
            trace.append(cost)
            lam /= 10.0
            _, new_mean = mean_pixel_error(c, intr, params)
            decrease = mean_err - new_mean
            mean_err = new_mean
            if decrease < opts.residual_tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > opts.lambda_max:
                converged = True
                break
    return _LmResult(params, cost, iterations, converged, tuple(trace))


def _dlt_pose(pts3d, pixels, intr) -> geom.Pose | None:
    """Direct linear transform estimate of the projection, decomposed to
    the nearest rigid pose. Needs >= 6 points and non-degenerate spread."""
    n = pts3d.shape[0]
    if n < 6:
        return None
    norm = np.linalg.solve(
        intr.k, np.column_stack((pixels, np.ones(n))).T
    ).T  # (n, 3), rows (xn, yn, 1)
    a = np.zeros((2 * n, 12))
    xyz1 = np.column_stack((pts3d, np.ones(n)))
    a[0::2, 0:4] = xyz1
    a[0::2, 8:12] = -norm[:, [0]] * xyz1
    a[1::2, 4:8] = xyz1
    a[1::2, 8:12] = -norm[:, [1]] * xyz1
    try:
        _, _, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    m = vt[-1].reshape(3, 4)
    depths = pts3d @ m[:, :3].T + m[:, 3]
    if np.mean(depths[:, 2]) < 0:
        m = -m
    a3 = m[:, :3]
    sv = np.sqrt(np.clip(np.linalg.eigvalsh(a3.T @ a3), 0.0, None))
    scale = float(sv.mean())
    if scale < 1e-12:
        return None
    try:
        return geom.Pose(geom.nearest_rotation(a3), m[:, 3] / scale)
    except ValueError:
        return None


def _orientation_grid():
    """The 24 axis-aligned orientations (rotation group of the cube)."""
    grid = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                r[row, col] = s
            if np.linalg.det(r) > 0:
                grid.append(r)
    return grid


def _grid_seeds(pts3d, pixels, intr):
    """Coarse orientation hypotheses at a scale-estimated depth."""
    centroid3 = pts3d.mean(axis=0)
    centroid2 = pixels.mean(axis=0)
    rms3 = float(np.sqrt(((pts3d - centroid3) ** 2).sum(axis=1).mean()))
    rms2 = float(np.sqrt(((pixels - centroid2) ** 2).sum(axis=1).mean()))
    if rms2 < 1e-9 or rms3 < 1e-9:
        return []
    depth = 0.5 * (intr.fx + intr.fy) * rms3 / rms2
    ray = np.linalg.solve(intr.k, np.array([centroid2[0], centroid2[1], 1.0]))
    seeds = []
    for r in _orientation_grid():
        t = depth * ray - r @ centroid3
        if t[2] > geom.MIN_DEPTH:
            seeds.append(geom.Pose(r, t))
    return seeds


def ground_plane_seeds(bbox_xywh, h: geom.GroundHomography,
                       intr: geom.CameraIntrinsics, n_yaw: int = 8) -> list:
    """Seed poses for a vehicle standing on the ground plane.

    The bounding-box bottom-center pixel is lifted through the homography
    to world coordinates; n_yaw world-yaw hypotheses (45 degree spacing by
    default) with zero roll and pitch are mapped into the camera frame
    through the decomposed extrinsics.
    """
    x, y, w, hh = bbox_xywh
    extr = geom.decompose_homography(intr, h)
    ground = geom.lift_ground_point(h, (x + w / 2.0, y + hh))
    world_t = np.array([ground[0], ground[1], 0.0])
    seeds = []
    for k in range(n_yaw):
        yaw = 2.0 * np.pi * k / n_yaw
        rw = geom.axis_angle_to_rotation((0.0, 0.0, yaw))
        seeds.append(
            geom.Pose(extr.rotation @ rw, extr.apply(world_t))
        )
    return seeds


def _run_starts(usable, intr, starts, opts, index_base: int = 0):
    """Run LM from each start; returns ((cost, index), result) of the
    winner or None. Stops early once a start reaches essentially zero
    cost, which no later hypothesis can improve on."""
    best = None
    for idx, start in enumerate(starts, start=index_base):
        try:
            result = _lm_minimize(
                usable, intr, _params_from_pose(start, opts.yaw_only), opts
            )
        except (PointBehindCameraError, DivergenceError):
            continue
        key = (result.cost, idx)
        if best is None or key < best[0]:
            best = (key, result)
        if result.cost < 1e-16:
            break
    return best


def solve_pnp(c: Correspondences, intr: geom.CameraIntrinsics,
              init: geom.Pose | None = None,
              opts: SolverOptions | None = None) -> SolveReport:
    """Recover the source roto-translation from correspondences.

    Keypoints that are invisible or fall below the confidence threshold
    are excluded; at least 4 must remain. Among all initializations the
    pose with the lowest weighted squared residual wins, ties broken by
    the lowest hypothesis index.

    Raises:
        InsufficientCorrespondencesError: fewer than 4 usable points.
        DegenerateConfigurationError: usable 3D points are collinear.
        DivergenceError: every start produced a non-finite residual.
    """
    opts = opts or SolverOptions()
    usable = Correspondences(tuple(
        p for p in c.pairs
        if p.keypoint.visible and p.keypoint.confidence >= opts.confidence_threshold
    ))
    if len(usable) < 4:
        raise InsufficientCorrespondencesError(
            f"{len(usable)} usable correspondences, need at least 4"
        )
    pts3d = np.array([p.point3d for p in usable.pairs])
    pixels = np.array([p.keypoint.position for p in usable.pairs])
    centered = pts3d - pts3d.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfigurationError("3D keypoints are collinear")

    starts = []
    if init is not None:
        starts.append(init)
    else:
        dlt = _dlt_pose(pts3d, pixels, intr)
        if dlt is not None:
            starts.append(dlt)
        starts.extend(opts.seed_poses)
        if not starts:
            starts.extend(_grid_seeds(pts3d, pixels, intr))
    if not starts:
        raise DivergenceError("no usable initialization")

    best = _run_starts(usable, intr, starts, opts)
    if init is None and (best is None
                         or best[1].cost > len(usable) * 25.0):
        # rescue round: coarse orientation grid (the regular starts
        # stayed far from any optimum, > ~5 px rms)
        rescue = _run_starts(usable, intr, _grid_seeds(pts3d, pixels, intr),
                             opts, index_base=len(starts))
        if rescue is not None and (best is None or rescue[0] < best[0]):
            best = rescue
    if best is None:
        raise DivergenceError("all initializations failed")

    result = best[1]
    per_point, mean_err = mean_pixel_error(usable, intr, result.params)
    return SolveReport(
        pose=_pose_from_params(result.params),
        final_residual=mean_err,
        iterations=result.iterations,
        converged=result.converged,
        per_point_residuals=tuple(float(e) for e in per_point),
    )


def rotation_rpy(rotation: np.ndarray) -> tuple:
    """Roll, pitch, yaw (radians) for R = Rz(yaw) Ry(pitch) Rx(roll)."""
    pitch = float(np.arcsin(np.clip(-rotation[2, 0], -1.0, 1.0)))
    if abs(rotation[2, 0]) < 1.0 - 1e-12:
        roll = float(np.arctan2(rotation[2, 1], rotation[2, 2]))
        yaw = float(np.arctan2(rotation[1, 0], rotation[0, 0]))
    else:
        roll = 0.0
        yaw = float(np.arctan2(-rotation[0, 1], rotation[1, 1]))
    return roll, pitch, yaw
