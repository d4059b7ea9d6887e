import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from splinefusion.errors import InvalidArgumentError
from splinefusion.rotations import (
    Pose,
    hat,
    is_rotation,
    quat_to_rotation,
    random_rotation,
    rotation_angle,
    rotation_to_quat,
    slerp,
    slerp_many,
    so3_exp,
    so3_log,
)


def test_hat_cross_product(rng):
    v = rng.normal(size=3)
    w = rng.normal(size=3)
    assert np.allclose(hat(v) @ w, np.cross(v, w), atol=1e-15)
    assert np.allclose(hat(v), -hat(v).T, atol=1e-15)


def test_exp_identity():
    assert np.allclose(so3_exp(np.zeros(3)), np.eye(3), atol=1e-15)


def test_exp_against_scipy(rng):
    v = rng.normal(size=(200, 3)) * rng.uniform(0.0, 3.0, size=(200, 1))
    ours = so3_exp(v)
    ref = ScipyRotation.from_rotvec(v).as_matrix()
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_log_against_scipy(rng):
    R = ScipyRotation.random(200, rng=rng).as_matrix()
    ours = so3_log(R)
    ref = ScipyRotation.from_matrix(R).as_rotvec()
    assert np.max(np.abs(ours - ref)) < 1e-10


def test_exp_log_roundtrip(rng):
    for scale in (1e-10, 1e-6, 0.5, 3.0):
        v = rng.normal(size=(50, 3))
        v = v / np.linalg.norm(v, axis=1, keepdims=True) * scale
        assert np.max(np.abs(so3_log(so3_exp(v)) - v)) < 1e-9


def test_log_principal_branch(rng):
    v = rng.normal(size=(50, 3))
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * 5.0  # beyond pi
    back = so3_log(so3_exp(v))
    assert np.all(np.linalg.norm(back, axis=1) <= np.pi + 1e-12)
    assert np.allclose(so3_exp(back), so3_exp(v), atol=1e-9)


def test_log_near_pi():
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                 np.array([0.3, -0.4, 0.86])):
        axis = axis / np.linalg.norm(axis)
        v = axis * (np.pi - 1e-9)
        assert np.allclose(so3_log(so3_exp(v)), v, atol=1e-6)


def test_exp_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        so3_exp(np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        so3_exp(np.array([np.nan, 0.0, 0.0]))


def test_quat_roundtrip(rng):
    R = ScipyRotation.random(300, rng=rng).as_matrix()
    q = rotation_to_quat(R)
    assert np.all(q[:, 0] >= 0.0)
    assert np.allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(quat_to_rotation(q) - R)) < 1e-12


def test_quat_near_pi():
    # w near zero exercises the Shepperd diagonal branches
    R = so3_exp(np.array([0.0, np.pi - 1e-12, 0.0]))
    q = rotation_to_quat(R)
    assert np.allclose(quat_to_rotation(q), R, atol=1e-12)


def test_is_rotation():
    assert is_rotation(np.eye(3))
    assert not is_rotation(np.eye(3) * 1.1)
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))  # reflection
    assert not is_rotation(np.full((3, 3), np.nan))


def test_log_validates():
    with pytest.raises(InvalidArgumentError):
        so3_log(np.eye(3) * 2.0)
    # validate=False skips the check
    so3_log(np.eye(3) * 2.0, validate=False)


def test_slerp_endpoints_and_midpoint(rng):
    Ra = random_rotation(rng)
    Rb = random_rotation(rng)
    assert np.allclose(slerp(Ra, Rb, 0.0), Ra, atol=1e-12)
    assert np.allclose(slerp(Ra, Rb, 1.0), Rb, atol=1e-12)
    mid = slerp(Ra, Rb, 0.5)
    assert np.isclose(
        rotation_angle(Ra.T @ mid), rotation_angle(mid.T @ Rb), atol=1e-12
    )
    with pytest.raises(InvalidArgumentError):
        slerp(Ra, Rb, 1.5)


def test_slerp_many_matches_scalar(rng):
    Ra = np.stack([random_rotation(rng) for _ in range(5)])
    Rb = np.stack([random_rotation(rng) for _ in range(5)])
    u = rng.uniform(0, 1, size=5)
    out = slerp_many(Ra, Rb, u)
    for i in range(5):
        assert np.allclose(out[i], slerp(Ra[i], Rb[i], float(u[i])), atol=1e-12)


def test_rotation_angle(rng):
    v = rng.normal(size=3)
    v = v / np.linalg.norm(v) * 1.2345
    assert np.isclose(rotation_angle(so3_exp(v)), 1.2345, atol=1e-12)


def test_pose_algebra(rng):
    A = Pose(random_rotation(rng), rng.normal(size=3))
    B = Pose(random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(4, 3))
    assert np.allclose(A.compose(B).apply(x), A.apply(B.apply(x)), atol=1e-12)
    AI = A.compose(A.inverse())
    assert np.allclose(AI.R, np.eye(3), atol=1e-12)
    assert np.allclose(AI.p, 0.0, atol=1e-12)
