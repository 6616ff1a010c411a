"""Camera, rotation and ground-plane geometry shared by all modules.

Conventions (fixed for the whole package):
  * image origin top-left, u to the right, v down;
  * camera frame right-handed with +z forward, +x right, +y down;
  * world ground plane is z = 0 with +z up;
  * the ground homography maps homogeneous pixel coordinates to
    homogeneous world ground-plane coordinates in meters.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateHomographyError,
    PointAtInfinityError,
    PointBehindCameraError,
)

ROTATION_TOL = 1e-9
MIN_DEPTH = 1e-9
MIN_HOMOGENEOUS_W = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels.

    Attributes:
        fx, fy: focal lengths.
        cx, cy: principal point.
        width, height: image size.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def k(self) -> np.ndarray:
        """3x3 calibration matrix."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def approximate(cls, width: int, height: int) -> "CameraIntrinsics":
        """Fallback intrinsics when a bundle ships none: fx = fy = width,
        principal point at the image center."""
        return cls(float(width), float(width), width / 2.0, height / 2.0,
                   width, height)


def _as_rotation(r) -> np.ndarray:
    r = np.array(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    err = np.abs(r.T @ r - np.eye(3)).max()
    det = np.linalg.det(r)
    if err > ROTATION_TOL or abs(det - 1.0) > ROTATION_TOL:
        raise ValueError(
            f"matrix is not a rotation (orthonormality error {err:.2e}, "
            f"det {det:.12f})"
        )
    r.flags.writeable = False
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid roto-translation p_out = rotation @ p_in + translation.

    Used both for vehicle poses (object frame to camera frame, the
    source/target roto-translations of the pipeline) and for camera
    extrinsics (world frame to camera frame).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class GroundHomography:
    """3x3 invertible map: homogeneous pixel -> homogeneous world meters."""

    h: np.ndarray
    _inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(h)) <= 1e-12:
            raise ValueError("homography is singular")
        h = h.copy()
        h.flags.writeable = False
        object.__setattr__(self, "h", h)
        inv = np.linalg.inv(h)
        inv.flags.writeable = False
        object.__setattr__(self, "_inv", inv)

    @property
    def inverse(self) -> np.ndarray:
        """World-ground-plane -> pixel direction (plane-to-image map)."""
        return self._inv


def project(intr: CameraIntrinsics, pose: Pose, p) -> np.ndarray:
    """Project an object-frame 3D point to a pixel.

    Raises:
        PointBehindCameraError: camera-frame depth z <= 1e-9.
    """
    q = pose.apply(np.asarray(p, dtype=np.float64))
    if q[2] <= MIN_DEPTH:
        raise PointBehindCameraError(f"point depth {q[2]:.3e} <= {MIN_DEPTH}")
    return np.array(
        [intr.fx * q[0] / q[2] + intr.cx, intr.fy * q[1] / q[2] + intr.cy]
    )


def project_many(intr: CameraIntrinsics, pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of (N, 3) object-frame points to (N, 2) pixels."""
    q = pose.apply(pts)
    z = q[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise PointBehindCameraError("at least one point is behind the camera")
    return np.column_stack(
        (intr.fx * q[:, 0] / z + intr.cx, intr.fy * q[:, 1] / z + intr.cy)
    )


def lift_ground_point(h: GroundHomography, px) -> np.ndarray:
    """Map a pixel to world ground-plane meters (z = 0 understood).

    Raises:
        PointAtInfinityError: the mapped homogeneous w is near zero.
    """
    px = np.asarray(px, dtype=np.float64)
    q = h.h @ np.array([px[0], px[1], 1.0])
    if abs(q[2]) <= MIN_HOMOGENEOUS_W:
        raise PointAtInfinityError(f"homogeneous w = {q[2]:.3e}")
    return q[:2] / q[2]


def ground_to_pixel(h: GroundHomography, xy) -> np.ndarray:
    """Inverse of lift_ground_point: world ground point to pixel."""
    xy = np.asarray(xy, dtype=np.float64)
    q = h.inverse @ np.array([xy[0], xy[1], 1.0])
    if abs(q[2]) <= MIN_HOMOGENEOUS_W:
        raise PointAtInfinityError(f"homogeneous w = {q[2]:.3e}")
    return q[:2] / q[2]


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: Pose) -> Pose:
    rt = a.rotation.T
    return Pose(rt, -(rt @ a.translation))


def axis_angle_to_rotation(v) -> np.ndarray:
    """Rodrigues formula; direction is the axis, magnitude the angle."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(v)
    k = np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )
    if theta < 1e-12:
        # second-order series keeps the round trip smooth near zero
        return np.eye(3) + k + 0.5 * (k @ k)
    k /= theta
    return (
        np.eye(3)
        + np.sin(theta) * k
        + (1.0 - np.cos(theta)) * (k @ k)
    )


def rotation_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues; returned magnitude is canonical in [0, pi].

    At angles near pi the axis is extracted through the largest diagonal
    element of (R + I)/2, which stays numerically stable where the
    antisymmetric part vanishes.
    """
    r = np.asarray(r, dtype=np.float64)
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-7:
        return 0.5 * w
    if np.pi - theta < 1e-7:
        # R ~ 2 a a^T - I: recover |a_i| from the diagonal, signs from
        # off-diagonal terms anchored at the largest component
        a2 = np.clip((np.diag(r) + 1.0) / 2.0, 0.0, None)
        i = int(np.argmax(a2))
        axis = np.zeros(3)
        axis[i] = np.sqrt(a2[i])
        j, l = [x for x in range(3) if x != i]
        axis[j] = r[i, j] / (2.0 * axis[i])
        axis[l] = r[i, l] / (2.0 * axis[i])
        axis /= np.linalg.norm(axis)
        # choose the sign that agrees with the (small) antisymmetric part
        if np.dot(axis, w) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix to the nearest rotation (polar decomposition
    through the symmetric eigendecomposition of m^T m)."""
    m = np.asarray(m, dtype=np.float64)
    w, v = np.linalg.eigh(m.T @ m)
    w = np.clip(w, 1e-30, None)
    r = m @ (v * (1.0 / np.sqrt(w))) @ v.T
    if np.linalg.det(r) < 0:
        # flip across the weakest singular direction (first eigh column)
        r = r @ (np.eye(3) - 2.0 * np.outer(v[:, 0], v[:, 0]))
    return r


def decompose_homography(intr: CameraIntrinsics, h: GroundHomography) -> Pose:
    """Recover world-to-camera extrinsics from the ground homography.

    Uses the plane-to-image map g = h^-1: the columns of K^-1 g are
    proportional to [r1 r2 t]. The scale sign is chosen so the camera
    sits above the ground plane (positive world z).

    Raises:
        DegenerateHomographyError: normalization scale below 1e-12.
    """
    g = h.inverse
    m = np.linalg.inv(intr.k) @ g
    scale = np.linalg.norm(m[:, 0])
    if scale < 1e-12:
        raise DegenerateHomographyError("first column of K^-1 h^-1 vanished")
    m = m / scale
    r3 = np.cross(m[:, 0], m[:, 1])
    # camera world height = -(r3 . t); flip the homography sign if negative
    if -float(np.dot(r3, m[:, 2])) <= 0.0:
        m = -m
        r3 = np.cross(m[:, 0], m[:, 1])
    r = nearest_rotation(np.column_stack((m[:, 0], m[:, 1], r3)))
    return Pose(r, m[:, 2])


def homography_from_extrinsics(intr: CameraIntrinsics, extr: Pose,
                               ) -> GroundHomography:
    """Forward construction: pixel -> ground homography implied by known
    intrinsics and world-to-camera extrinsics."""
    g = intr.k @ np.column_stack(
        (extr.rotation[:, 0], extr.rotation[:, 1], extr.translation)
    )
    return GroundHomography(np.linalg.inv(g))


def camera_height(extr: Pose) -> float:
    """World z of the camera center for world-to-camera extrinsics."""
    center = -(extr.rotation.T @ extr.translation)
    return float(center[2])
