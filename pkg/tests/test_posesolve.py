import numpy as np
import pytest

from futurescene import geom, posesolve
from futurescene.carshapes import builtin_cad
from futurescene.errors import (
    DegenerateConfigurationError,
    InsufficientCorrespondencesError,
)
from futurescene.posesolve import (
    KEYPOINT_NAMES,
    Correspondence,
    Correspondences,
    Keypoint2D,
    SolverOptions,
    residual_and_jacobian,
    solve_pnp,
)

from oracles import finite_difference_jacobian, random_rotation, scalar_project

INTR = geom.CameraIntrinsics(1000.0, 1000.0, 640.0, 360.0, 1280, 720)


def make_ground_truth(rng, cad_id=1, noise=0.0, depth_range=(8.0, 25.0)):
    """Forward-projection oracle: exact keypoints under a random pose,
    computed with the scalar projection reference."""
    cad = builtin_cad(cad_id)
    rot = random_rotation(rng)
    t = np.array([rng.uniform(-3, 3), rng.uniform(-2, 2),
                  rng.uniform(*depth_range)])
    keypoints = []
    for name in KEYPOINT_NAMES:
        p3 = cad.keypoints3d[name]
        u, v = scalar_project(INTR.fx, INTR.fy, INTR.cx, INTR.cy, rot, t, p3)
        pos = np.array([u, v]) + rng.normal(0.0, noise, size=2) if noise else (u, v)
        keypoints.append(Keypoint2D(name, pos))
    c = Correspondences.match(keypoints, cad.keypoints3d)
    return geom.Pose(rot, t), c


def rotation_angle_deg(ra, rb):
    cos_t = np.clip((np.trace(ra.T @ rb) - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(cos_t))


def test_exactly_twelve_keypoint_names():
    assert len(posesolve.KeypointName) == 12
    assert len(set(KEYPOINT_NAMES)) == 12


def test_unweighted_option():
    rng = np.random.default_rng(40)
    pose, c = make_ground_truth(rng)
    half = tuple(
        posesolve.Correspondence(
            Keypoint2D(p.keypoint.name, p.keypoint.position, confidence=0.5),
            p.point3d)
        for p in c.pairs
    )
    c2 = Correspondences(half)
    params = np.concatenate(
        [geom.rotation_to_axis_angle(pose.rotation), pose.translation]
    ) + 0.01
    weighted, _ = residual_and_jacobian(c2, INTR, params, weighted=True)
    plain, _ = residual_and_jacobian(c2, INTR, params, weighted=False)
    assert np.allclose(weighted, plain * np.sqrt(0.5))


class TestResidualAndJacobian:
    def test_zero_residual_at_ground_truth(self):
        rng = np.random.default_rng(0)
        pose, c = make_ground_truth(rng)
        params = np.concatenate(
            [geom.rotation_to_axis_angle(pose.rotation), pose.translation]
        )
        res, _ = residual_and_jacobian(c, INTR, params)
        assert np.abs(res).max() < 1e-9

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pose, c = make_ground_truth(rng)
            params = np.concatenate([
                geom.rotation_to_axis_angle(pose.rotation) + rng.normal(0, 0.1, 3),
                pose.translation + rng.normal(0, 0.2, 3),
            ])
            _, jac = residual_and_jacobian(c, INTR, params)
            fd = finite_difference_jacobian(
                lambda p: residual_and_jacobian(c, INTR, p)[0], params
            )
            scale = max(1.0, np.abs(fd).max())
            assert np.abs(jac - fd).max() / scale < 1e-4

    def test_zero_confidence_zeroes_rows(self):
        rng = np.random.default_rng(2)
        pose, c = make_ground_truth(rng)
        kp0 = c.pairs[0].keypoint
        muted = Keypoint2D(kp0.name, kp0.position + 50.0, confidence=0.0)
        c2 = Correspondences(
            (Correspondence(muted, c.pairs[0].point3d),) + c.pairs[1:]
        )
        params = np.concatenate(
            [geom.rotation_to_axis_angle(pose.rotation), pose.translation]
        ) + 0.01
        res, jac = residual_and_jacobian(c2, INTR, params)
        assert res[0] == 0.0 and res[1] == 0.0
        assert np.all(jac[0] == 0.0) and np.all(jac[1] == 0.0)

    def test_invisible_points_are_excluded(self):
        rng = np.random.default_rng(3)
        pose, c = make_ground_truth(rng)
        kp0 = c.pairs[0].keypoint
        hidden = Keypoint2D(kp0.name, kp0.position, visible=False)
        c2 = Correspondences(
            (Correspondence(hidden, c.pairs[0].point3d),) + c.pairs[1:]
        )
        params = np.concatenate(
            [geom.rotation_to_axis_angle(pose.rotation), pose.translation]
        )
        res, _ = residual_and_jacobian(c2, INTR, params)
        assert res.shape[0] == 2 * (len(c.pairs) - 1)


class TestSolvePnp:
    def test_exact_recovery_without_init(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pose, c = make_ground_truth(rng)
            report = solve_pnp(c, INTR)
            assert rotation_angle_deg(report.pose.rotation, pose.rotation) < 0.5
            depth = pose.translation[2]
            assert np.linalg.norm(report.pose.translation - pose.translation) \
                < 0.01 * depth
            assert report.final_residual < 1e-6

    def test_exact_init_converges_immediately(self):
        rng = np.random.default_rng(5)
        pose, c = make_ground_truth(rng)
        report = solve_pnp(c, INTR, init=pose)
        assert report.converged
        assert report.iterations <= 1
        assert report.final_residual < 1e-9

    def test_three_points_rejected(self):
        rng = np.random.default_rng(6)
        _, c = make_ground_truth(rng)
        with pytest.raises(InsufficientCorrespondencesError):
            solve_pnp(Correspondences(c.pairs[:3]), INTR)

    def test_low_confidence_points_do_not_count(self):
        rng = np.random.default_rng(7)
        _, c = make_ground_truth(rng)
        weak = tuple(
            Correspondence(
                Keypoint2D(p.keypoint.name, p.keypoint.position, confidence=0.1),
                p.point3d,
            )
            for p in c.pairs[:9]
        )
        with pytest.raises(InsufficientCorrespondencesError):
            solve_pnp(Correspondences(weak + c.pairs[9:]), INTR)

    def test_collinear_points_rejected(self):
        pts = [Keypoint2D(n, (100.0 + 10 * i, 200.0))
               for i, n in enumerate(KEYPOINT_NAMES[:6])]
        pairs = tuple(
            Correspondence(kp, np.array([i * 0.5, 0.0, 0.0]))
            for i, kp in enumerate(pts)
        )
        with pytest.raises(DegenerateConfigurationError):
            solve_pnp(Correspondences(pairs), INTR)

    def test_noise_robustness_sample(self):
        rng = np.random.default_rng(8)
        bad = 0
        for _ in range(20):
            pose, c = make_ground_truth(rng, noise=0.5)
            report = solve_pnp(c, INTR)
            depth = pose.translation[2]
            rot_err = rotation_angle_deg(report.pose.rotation, pose.rotation)
            t_err = np.linalg.norm(report.pose.translation - pose.translation)
            if rot_err > 3.0 or t_err > 0.03 * depth:
                bad += 1
        assert bad <= 1

    def test_monotone_accepted_cost(self):
        rng = np.random.default_rng(9)
        pose, c = make_ground_truth(rng, noise=1.0)
        start = geom.Pose(pose.rotation,
                          pose.translation + np.array([0.5, -0.3, 1.5]))
        result = posesolve._lm_minimize(
            c, INTR, posesolve._params_from_pose(start, False), SolverOptions()
        )
        trace = np.array(result.cost_trace)
        assert np.all(np.diff(trace) <= 0.0)

    def test_yaw_only_mode(self):
        rng = np.random.default_rng(10)
        cad = builtin_cad(1)
        yaw = geom.axis_angle_to_rotation((0.0, 0.0, 0.7))
        pose = geom.Pose(yaw, (0.5, 0.2, 12.0))
        kps = [
            Keypoint2D(n, geom.project(INTR, pose, cad.keypoints3d[n]))
            for n in KEYPOINT_NAMES
        ]
        c = Correspondences.match(kps, cad.keypoints3d)
        report = solve_pnp(c, INTR, opts=SolverOptions(yaw_only=True))
        roll, pitch, _ = posesolve.rotation_rpy(report.pose.rotation)
        assert roll == 0.0 and pitch == 0.0
        assert report.final_residual < 1e-6

    def test_determinism(self):
        rng = np.random.default_rng(11)
        _, c = make_ground_truth(rng, noise=0.5)
        a = solve_pnp(c, INTR)
        b = solve_pnp(c, INTR)
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.translation, b.pose.translation)
        assert a.final_residual == b.final_residual
        assert a.iterations == b.iterations
        assert a.per_point_residuals == b.per_point_residuals

    def test_ground_plane_seeds_reach_solution(self):
        # vehicle upright on the ground plane seen by an elevated camera
        rng = np.random.default_rng(12)
        cam_pos = np.array([0.0, -12.0, 7.0])
        fwd = np.array([0.0, 12.0, -5.0])
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, [0, 0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        extr = geom.Pose(geom.nearest_rotation(np.stack([right, down, fwd])),
                         -(np.stack([right, down, fwd]) @ cam_pos))
        h = geom.homography_from_extrinsics(INTR, extr)
        cad = builtin_cad(2)
        world = geom.Pose(geom.axis_angle_to_rotation((0, 0, 0.9)),
                          (1.0, 4.0, 0.74))
        truth = geom.compose(extr, world)
        kps = [
            Keypoint2D(n, geom.project(INTR, truth, cad.keypoints3d[n]))
            for n in KEYPOINT_NAMES
        ]
        c = Correspondences.match(kps, cad.keypoints3d)
        px = geom.project_many(INTR, truth, cad.keypoint_array)
        x0, y0 = px.min(axis=0)
        x1, y1 = px.max(axis=0)
        seeds = posesolve.ground_plane_seeds(
            (x0, y0, x1 - x0, y1 - y0), h, INTR
        )
        assert len(seeds) == 8
        report = solve_pnp(c, INTR, opts=SolverOptions(seed_poses=tuple(seeds)))
        assert rotation_angle_deg(report.pose.rotation, truth.rotation) < 0.5
        assert report.final_residual < 1e-6
