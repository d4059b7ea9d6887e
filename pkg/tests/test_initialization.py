import numpy as np
import pytest

from splinefusion import initialization as ini
from splinefusion import simulate as sim
from splinefusion.camera import CameraModel
from splinefusion.errors import (
    BootstrapUnavailableError,
    DegenerateConfigurationError,
    InvalidArgumentError,
)
from splinefusion.rotations import random_rotation, rotation_angle

from conftest import noiseless_spec


def test_umeyama_exact(rng):
    src = rng.normal(size=(40, 3))
    true = ini.Sim3Transform(1.7, random_rotation(rng), rng.normal(size=3))
    tgt = true.apply(src)
    est = ini.umeyama(src, tgt)
    assert abs(est.s - true.s) < 1e-9
    assert np.max(np.abs(est.R - true.R)) < 1e-9
    assert np.max(np.abs(est.t - true.t)) < 1e-9
    assert np.max(np.abs(est.apply(src) - tgt)) < 1e-9


def test_umeyama_reflection_guard(rng):
    src = rng.normal(size=(30, 3))
    tgt = src * np.array([1.0, 1.0, -1.0])  # a reflection
    est = ini.umeyama(src, tgt)
    assert np.isclose(np.linalg.det(est.R), 1.0, atol=1e-9)


def test_umeyama_degenerate():
    line = np.outer(np.linspace(0, 1, 20), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateConfigurationError):
        ini.umeyama(line, line + 1.0)
    with pytest.raises(DegenerateConfigurationError):
        ini.umeyama(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        ini.umeyama(np.zeros((5, 3)), np.zeros((6, 3)))


def test_sim3_algebra(rng):
    a = ini.Sim3Transform(2.0, random_rotation(rng), rng.normal(size=3))
    b = ini.Sim3Transform(0.5, random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(5, 3))
    assert np.allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    ident = a.compose(a.inverse())
    assert np.isclose(ident.s, 1.0) and np.allclose(ident.t, 0, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        ini.Sim3Transform(-1.0, np.eye(3), np.zeros(3))


def test_pnp_recovers_pose(rng):
    cam = CameraModel(fx=400.0, fy=400.0, cx=320.0, cy=240.0,
                      width=640, height=480)
    R_wc = random_rotation(rng)
    p_wc = rng.normal(size=3)
    pts_cam = rng.uniform([-1.5, -1.0, 2.0], [1.5, 1.0, 8.0], size=(30, 3))
    pts_world = (R_wc @ pts_cam.T).T + p_wc
    px = np.stack([
        cam.fx * pts_cam[:, 0] / pts_cam[:, 2] + cam.cx,
        cam.fy * pts_cam[:, 1] / pts_cam[:, 2] + cam.cy,
    ], axis=1)
    T = ini.pnp_dlt(cam, pts_world, px)
    assert np.linalg.norm(T.p - p_wc) < 1e-6
    assert rotation_angle(T.R.T @ R_wc) < 1e-6


def test_pnp_degenerate(rng):
    cam = CameraModel(fx=400.0, fy=400.0, cx=320.0, cy=240.0,
                      width=640, height=480)
    with pytest.raises(DegenerateConfigurationError):
        ini.pnp_dlt(cam, np.zeros((4, 3)), np.zeros((4, 2)))
    with pytest.raises(DegenerateConfigurationError):
        ini.pnp_dlt(cam, np.tile(np.ones(3), (10, 1)), np.zeros((10, 2)))


def test_fit_spline_to_poses_fast_convergence():
    """Fitting smooth poses converges in under 20 iterations with a tight
    reproduction error."""
    gt = sim.make_ground_truth("circle", duration=8.0, margin=0.5)
    ts = np.arange(0.0, 8.0, 0.1)
    pos = gt.position.sample_many(ts)
    rot = gt.rotation.sample_many(ts)
    fit = ini.fit_spline_to_poses(ts, pos, rot, order=5, node_hz=5.0)
    assert fit.report.iterations < 20
    assert fit.rms_position < 1e-4
    assert fit.rms_rotation < 1e-3


def test_fit_spline_input_validation():
    with pytest.raises(InvalidArgumentError):
        ini.fit_spline_to_poses(
            np.arange(3.0), np.zeros((3, 3)), np.stack([np.eye(3)] * 3),
            order=5, node_hz=1.0,
        )


def _bootstrap_dataset():
    params = sim.ProfileParams(kind="circle", radius=2.0, rate=0.8,
                               static_prefix=1.5)
    gt = sim.make_ground_truth(params, duration=10.0)
    rig = sim.default_rig()
    noise = noiseless_spec(imu_hz=200.0)
    result = sim.synthesize(gt, rig, noise, num_landmarks=150)
    return gt, result.measurements


def test_imu_scale_bootstrap_recovers_scale():
    """Dead-reckoning a noiseless segment recovers a synthetic scale factor
    to within 10%."""
    gt, meas = _bootstrap_dataset()
    true_scale = 2.5
    grid = gt.position.grid
    import splinefusion.bsplines as bs
    pos_scaled = bs.SplineR3(grid, gt.position.nodes / true_scale)
    res = ini.imu_scale_bootstrap(
        pos_scaled, gt.rotation,
        meas.imu_t_ns * 1e-9, meas.gyro, meas.accel,
        static_window=1.0, motion_duration=3.0,
    )
    assert abs(res.sim3.s - true_scale) / true_scale < 0.10
    assert np.allclose(
        res.gravity_body / np.linalg.norm(res.gravity_body),
        [0.0, 0.0, -1.0], atol=1e-3,
    )


def test_bootstrap_requires_static_prefix():
    from conftest import wobbly_ground_truth
    gt = wobbly_ground_truth(duration=6.0)
    rig = sim.default_rig()
    meas = sim.synthesize(gt, rig, noiseless_spec(imu_hz=200.0),
                          num_landmarks=120).measurements
    with pytest.raises(BootstrapUnavailableError):
        ini.imu_scale_bootstrap(
            gt.position, gt.rotation,
            meas.imu_t_ns * 1e-9, meas.gyro, meas.accel,
        )


def test_align_to_world_recovers_offset_and_antenna(tiny_noiseless):
    """GPS alignment jointly recovers the similarity, the antenna lever arm
    and the GPS clock offset on noiseless data."""
    gt, rig, noise, result = tiny_noiseless
    meas = result.measurements
    res = ini.align_to_world(
        gt.position, gt.rotation,
        meas.gps_t_ns * 1e-9, meas.gps,
    )
    assert abs(res.t_gps_imu - rig.t_gps_imu) < 1e-4
    assert np.max(np.abs(res.p_antenna - rig.p_antenna_body)) < 1e-4
    assert abs(res.sim3.s - 1.0) < 1e-6
    assert rotation_angle(res.sim3.R) < 1e-5
    assert np.linalg.norm(res.sim3.t) < 1e-4


def test_align_to_world_needs_enough_fixes(tiny_noiseless):
    gt, _, _, result = tiny_noiseless
    meas = result.measurements
    with pytest.raises(InvalidArgumentError):
        ini.align_to_world(
            gt.position, gt.rotation,
            meas.gps_t_ns[:4] * 1e-9, meas.gps[:4],
        )
