import numpy as np
import pytest

from futurescene import geom, traj
from futurescene.errors import HorizonExceedsTrajectoryError
from futurescene.traj import (
    FuturePlan,
    PlanOptions,
    TrackEntry,
    Trajectory,
    VehicleTrack,
    lift_track,
    plan_future,
    resample_user_polyline,
    world_yaw,
)

from oracles import homogeneous_lift, random_rotation

IDENTITY_H = geom.GroundHomography(np.eye(3))


def make_extrinsics():
    cam_pos = np.array([2.0, -10.0, 6.0])
    fwd = np.array([-0.1, 10.0, -4.0])
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = geom.nearest_rotation(np.stack([right, down, fwd]))
    return geom.Pose(r, -(r @ cam_pos))


def vehicle_source(extr, xy=(0.0, 0.0), yaw=0.3, height=0.7):
    world = geom.Pose(geom.axis_angle_to_rotation((0, 0, yaw)),
                      (xy[0], xy[1], height))
    return geom.compose(extr, world)


class TestLiftTrack:
    def test_bottom_centers_identity(self):
        track = VehicleTrack(1, (
            TrackEntry(0, (95.0, 180.0, 10.0, 20.0)),
            TrackEntry(1, (105.0, 180.0, 10.0, 20.0)),
        ))
        out = lift_track(track, IDENTITY_H, fps=10.0)
        assert np.allclose(out.t, [0.0, 0.1])
        assert np.allclose(out.xy, [[100.0, 200.0], [110.0, 200.0]])

    def test_stationary_box(self):
        track = VehicleTrack(1, tuple(
            TrackEntry(k, (50.0, 60.0, 20.0, 10.0)) for k in range(5)
        ))
        out = lift_track(track, IDENTITY_H, fps=10.0)
        assert np.all(out.xy == out.xy[0])

    def test_scaled_homography_scales_speed(self):
        h = geom.GroundHomography(np.diag([0.1, 0.1, 1.0]))
        track = VehicleTrack(1, tuple(
            TrackEntry(k, (100.0 + 30.0 * k, 200.0, 10.0, 10.0))
            for k in range(4)
        ))
        out = lift_track(track, h, fps=10.0)
        for k, e in enumerate(track.entries):
            bc = traj.bbox_bottom_center(e.bbox)
            assert np.allclose(out.xy[k], homogeneous_lift(h.h, *bc), atol=1e-12)
        speeds = np.linalg.norm(np.diff(out.xy, axis=0), axis=1) / 0.1
        assert np.allclose(speeds, 30.0 * 10.0 * 0.1)


class TestResamplePolyline:
    def test_straight_segment(self):
        out = resample_user_polyline([(0.0, 0.0), (10.0, 0.0)], IDENTITY_H,
                                     horizon=1.0, timestep=0.2)
        assert len(out) == 6
        assert np.allclose(out.xy[:, 0], [0, 2, 4, 6, 8, 10])
        assert np.allclose(out.xy[:, 1], 0.0)

    def test_coincident_points_stationary(self):
        out = resample_user_polyline([(5.0, 7.0), (5.0, 7.0)], IDENTITY_H,
                                     horizon=1.0, timestep=0.2)
        assert np.all(out.xy == [5.0, 7.0])

    def test_l_shape_against_dense_table(self):
        poly = [(0.0, 0.0), (6.0, 0.0), (6.0, 6.0)]
        out = resample_user_polyline(poly, IDENTITY_H, 1.0, 0.2)
        # dense arc-length table oracle
        dense = []
        for a, b in zip(poly[:-1], poly[1:]):
            for s in np.linspace(0, 1, 100001)[:-1]:
                dense.append((1 - s) * np.asarray(a) + s * np.asarray(b))
        dense.append(np.asarray(poly[-1]))
        dense = np.array(dense)
        lens = np.concatenate([[0], np.cumsum(
            np.linalg.norm(np.diff(dense, axis=0), axis=1))])
        total = lens[-1]
        for k, p in enumerate(out.xy):
            target = k * total / 5.0
            idx = np.searchsorted(lens, target)
            idx = min(idx, len(dense) - 1)
            assert np.linalg.norm(p - dense[idx]) < 1e-3
            d2 = np.linalg.norm(dense - p, axis=1)
            assert d2.min() < 1e-9  # the point lies on the polyline
            # cumulative arc length at the point is a multiple of the spacing
            arc = lens[int(d2.argmin())]
            assert abs(arc - target) < 1e-3

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            resample_user_polyline([(0, 0), (1, 1)], IDENTITY_H, 1.0, 0.3)


def straight_trajectory(n=5, dt=0.2, speed=4.0, start=(0.0, 0.0), heading=0.0):
    t = dt * np.arange(n + 1)
    direction = np.array([np.cos(heading), np.sin(heading)])
    xy = np.asarray(start) + speed * dt * np.outer(np.arange(n + 1), direction)
    return Trajectory(t, xy)


def quarter_turn_trajectory(n=5, dt=0.2, step=2.0):
    """Headings 0, 22.5, ..., 90 degrees with equal-length segments, so
    the net heading change between first and last segment is exactly 90."""
    pts = [np.zeros(2)]
    for k in range(n):
        h = np.deg2rad(90.0 * k / (n - 1))
        pts.append(pts[-1] + step * np.array([np.cos(h), np.sin(h)]))
    return Trajectory(dt * np.arange(n + 1), np.array(pts))


class TestPlanFuture:
    def test_stationary_equals_source_exactly(self):
        extr = make_extrinsics()
        src = vehicle_source(extr)
        stationary = Trajectory(0.2 * np.arange(6), np.zeros((6, 2)) + [3.0, 1.0])
        plan = plan_future(src, stationary, extr)
        assert len(plan.target_poses) == 5
        for _, pose in plan.target_poses:
            assert np.array_equal(pose.rotation, src.rotation)
            assert np.array_equal(pose.translation, src.translation)

    def test_straight_line_keeps_rotation(self):
        extr = make_extrinsics()
        src = vehicle_source(extr)
        plan = plan_future(src, straight_trajectory(heading=0.45), extr)
        steps = []
        for _, pose in plan.target_poses:
            assert np.abs(pose.rotation - src.rotation).max() < 1e-12
            steps.append(pose.translation)
        gaps = np.linalg.norm(np.diff(np.array(steps), axis=0), axis=1)
        assert np.all(gaps > 0.1)
        assert np.allclose(gaps, gaps[0], atol=1e-9)

    def test_quarter_turn_yaw_and_homogeneous_oracle(self):
        extr = make_extrinsics()
        src = vehicle_source(extr, yaw=0.0)
        trajectory = quarter_turn_trajectory()
        plan = plan_future(src, trajectory, extr)
        yaw_delta = world_yaw(plan.target_poses[-1][1], extr) - world_yaw(src, extr)
        assert abs(np.degrees(yaw_delta) - 90.0) < 0.5

        # homogeneous 4x4 composition oracle
        e = extr.matrix
        m = src.matrix
        positions = trajectory.xy
        headings = [np.arctan2(*(positions[k + 1] - positions[k])[::-1])
                    for k in range(5)]
        prev = headings[0]
        acc = np.eye(4)
        for k in range(5):
            turn = headings[k] - prev
            prev = headings[k]
            rz = np.eye(4)
            rz[:3, :3] = geom.axis_angle_to_rotation((0, 0, turn))
            pk = np.array([positions[k][0], positions[k][1], 0.0])
            pk1 = np.array([positions[k + 1][0], positions[k + 1][1], 0.0])
            step = rz.copy()
            step[:3, 3] = pk1 - rz[:3, :3] @ pk
            acc = step @ acc
        want = e @ acc @ np.linalg.inv(e) @ m
        got = plan.target_poses[-1][1].matrix
        assert np.abs(got - want).max() < 1e-9

    def test_translation_equivariance(self):
        # translating trajectory and source together shifts every target
        # pose by the camera image of the offset, rotations unchanged
        extr = make_extrinsics()
        src = vehicle_source(extr, xy=(0.0, 0.0))
        trajectory = quarter_turn_trajectory()
        offset = np.array([3.0, -2.0])
        src2 = geom.Pose(
            src.rotation,
            src.translation + extr.rotation @ np.array([offset[0], offset[1], 0.0]),
        )
        a = plan_future(src, trajectory, extr)
        b = plan_future(src2, trajectory.translated(offset), extr)
        cam_offset = extr.rotation @ np.array([offset[0], offset[1], 0.0])
        for (_, pa), (_, pb) in zip(a.target_poses, b.target_poses):
            assert np.abs(pb.rotation - pa.rotation).max() < 1e-9
            assert np.abs(pb.translation - (pa.translation + cam_offset)).max() < 1e-9

    def test_concatenation_consistency(self):
        extr = make_extrinsics()
        src = vehicle_source(extr)
        trajectory = quarter_turn_trajectory(n=10, dt=0.1)
        full = plan_future(src, trajectory, extr,
                           PlanOptions(horizon=1.0, timestep=0.1))
        first = plan_future(src, trajectory, extr,
                            PlanOptions(horizon=0.5, timestep=0.1))
        mid_pose = first.target_poses[-1][1]
        second_half = Trajectory(trajectory.t[5:], trajectory.xy[5:])
        positions = trajectory.xy
        seam_heading = float(np.arctan2(*(positions[5] - positions[4])[::-1]))
        rest = plan_future(mid_pose, second_half, extr,
                           PlanOptions(horizon=0.5, timestep=0.1,
                                       initial_heading=seam_heading))
        want = full.target_poses[-1][1]
        got = rest.target_poses[-1][1]
        assert np.abs(got.rotation - want.rotation).max() < 1e-9
        assert np.abs(got.translation - want.translation).max() < 1e-9

    def test_tiny_steps_keep_heading(self):
        extr = make_extrinsics()
        src = vehicle_source(extr)
        # jitter far below the 1e-4 m threshold must not create spin
        xy = np.array([[1.0, 1.0], [1.0 + 3e-5, 1.0 - 2e-5], [1.0, 1.0],
                       [1.0 + 1e-5, 1.0], [1.0, 1.0], [1.0, 1.0]])
        plan = plan_future(src, Trajectory(0.2 * np.arange(6), xy), extr)
        for _, pose in plan.target_poses:
            assert np.abs(pose.rotation - src.rotation).max() < 1e-12

    def test_horizon_exceeds_trajectory(self):
        extr = make_extrinsics()
        src = vehicle_source(extr)
        with pytest.raises(HorizonExceedsTrajectoryError):
            plan_future(src, straight_trajectory(n=3), extr,
                        PlanOptions(horizon=1.0, timestep=0.2))

    def test_align_first_heading(self):
        extr = make_extrinsics()
        src = vehicle_source(extr, yaw=1.2)
        trajectory = straight_trajectory(heading=0.2)
        plan = plan_future(src, trajectory, extr,
                           PlanOptions(align_first_heading=True))
        got = world_yaw(plan.target_poses[0][1], extr)
        assert abs(got - 0.2) < 1e-9
