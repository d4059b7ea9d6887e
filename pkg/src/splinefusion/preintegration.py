"""IMU preintegration between consecutive frames (midpoint rule).

The delta state is (dR, dv, dp) relative to the frame at the interval
start.  The 9x9 covariance and the 9x6 bias Jacobian use the tangent
ordering (rotation, velocity, position) and bias ordering (accel, gyro).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidArgumentError
from .rotations import hat, so3_exp, so3_log

_JITTER = 1e-16


def _right_jacobian(phi):
    """SO(3) right Jacobian J_r(phi)."""
    theta = np.linalg.norm(phi)
    K = hat(phi)
    if theta < 1e-7:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / t2 * K
        + (theta - np.sin(theta)) / (t2 * theta) * (K @ K)
    )


@dataclass(frozen=True)
class PreintegratedImu:
    dR: np.ndarray  # (3, 3)
    dv: np.ndarray  # (3,)
    dp: np.ndarray  # (3,)
    dt_total: float
    covariance: np.ndarray  # (9, 9), (theta, v, p) ordering
    J_bias: np.ndarray  # (9, 6), columns (b_accel, b_gyro)
    bias_lin: tuple  # (b_accel (3,), b_gyro (3,))
    t_start: float
    t_end: float

    def corrected(self, b_accel, b_gyro):
        """First-order bias-corrected (dR, dv, dp)."""
        dba = np.asarray(b_accel, dtype=float) - self.bias_lin[0]
        dbg = np.asarray(b_gyro, dtype=float) - self.bias_lin[1]
        J = self.J_bias
        dR = self.dR @ so3_exp(J[0:3, 3:6] @ dbg)
        dv = self.dv + J[3:6, 0:3] @ dba + J[3:6, 3:6] @ dbg
        dp = self.dp + J[6:9, 0:3] @ dba + J[6:9, 3:6] @ dbg
        return dR, dv, dp

    def sqrt_info(self):
        """Matrix W with W^T W = covariance^{-1} (whitens the residual)."""
        cov = self.covariance + _JITTER * np.eye(9)
        return np.linalg.inv(np.linalg.cholesky(cov))


def _interp_row(times, values, t):
    k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0,
                    len(times) - 2))
    a = (t - times[k]) / (times[k + 1] - times[k])
    return (1.0 - a) * values[k] + a * values[k + 1]


def integrate(times, gyro, accel, bias_lin=(np.zeros(3), np.zeros(3)),
              gyro_sigma=1e-3, accel_sigma=8e-3, t_start=None, t_end=None):
    """Midpoint-rule preintegration of an IMU slice over [t_start, t_end].

    ``gyro_sigma``/``accel_sigma`` are discrete per-sample standard
    deviations.  Boundary samples are linearly interpolated to the exact
    segment edges; the samples must cover the segment.
    """
    times = np.asarray(times, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    if times.size == 0:
        raise InvalidArgumentError("empty IMU slice")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise DataError("IMU timestamps are not strictly increasing")
    t_start = float(times[0] if t_start is None else t_start)
    t_end = float(times[-1] if t_end is None else t_end)
    if t_end < t_start:
        raise InvalidArgumentError("t_end before t_start")
    b_a = np.asarray(bias_lin[0], dtype=float)
    b_g = np.asarray(bias_lin[1], dtype=float)

    if t_end == t_start:
        return PreintegratedImu(
            dR=np.eye(3), dv=np.zeros(3), dp=np.zeros(3), dt_total=0.0,
            covariance=np.zeros((9, 9)), J_bias=np.zeros((9, 6)),
            bias_lin=(b_a.copy(), b_g.copy()), t_start=t_start, t_end=t_end,
        )
    if times.size < 2 or times[0] > t_start + 1e-9 or times[-1] < t_end - 1e-9:
        raise DataError(
            f"IMU samples [{times[0]}, {times[-1]}] do not cover "
            f"[{t_start}, {t_end}]"
        )

    inner = (times > t_start) & (times < t_end)
    ts = np.concatenate([[t_start], times[inner], [t_end]])
    ws = np.vstack([[_interp_row(times, gyro, t_start)], gyro[inner],
                    [_interp_row(times, gyro, t_end)]])
    accs = np.vstack([[_interp_row(times, accel, t_start)], accel[inner],
                      [_interp_row(times, accel, t_end)]])

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    J = np.zeros((9, 6))
    eye = np.eye(3)
    for n in range(len(ts) - 1):
        dt = ts[n + 1] - ts[n]
        if dt <= 0:
            continue
        w = 0.5 * (ws[n] + ws[n + 1]) - b_g
        a = 0.5 * (accs[n] + accs[n + 1]) - b_a
        phi = w * dt
        E = so3_exp(phi)
        Jr = _right_jacobian(phi)
        R_mid = dR @ so3_exp(0.5 * phi)
        Ra = R_mid @ a
        A = np.zeros((9, 9))
        A[0:3, 0:3] = E.T
        A[3:6, 0:3] = -R_mid @ hat(a) * dt
        A[3:6, 3:6] = eye
        A[6:9, 0:3] = -0.5 * R_mid @ hat(a) * dt * dt
        A[6:9, 3:6] = eye * dt
        A[6:9, 6:9] = eye
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = R_mid * dt
        B[6:9, 3:6] = 0.5 * R_mid * dt * dt
        Q = np.zeros((6, 6))
        Q[0:3, 0:3] = gyro_sigma**2 * eye
        Q[3:6, 3:6] = accel_sigma**2 * eye
        cov = A @ cov @ A.T + B @ Q @ B.T
        Jn = np.zeros((9, 6))
        Jn[0:3, 3:6] = E.T @ J[0:3, 3:6] - Jr * dt
        Jn[3:6, 0:3] = J[3:6, 0:3] - R_mid * dt
        Jn[3:6, 3:6] = J[3:6, 3:6] - R_mid @ hat(a) @ J[0:3, 3:6] * dt
        Jn[6:9, 0:3] = J[6:9, 0:3] + J[3:6, 0:3] * dt - 0.5 * R_mid * dt * dt
        Jn[6:9, 3:6] = (
            J[6:9, 3:6]
            + J[3:6, 3:6] * dt
            - 0.5 * R_mid @ hat(a) @ J[0:3, 3:6] * dt * dt
        )
        J = Jn
        dp = dp + dv * dt + 0.5 * Ra * dt * dt
        dv = dv + Ra * dt
        dR = dR @ E

    return PreintegratedImu(
        dR=dR, dv=dv, dp=dp, dt_total=t_end - t_start,
        covariance=0.5 * (cov + cov.T), J_bias=J,
        bias_lin=(b_a.copy(), b_g.copy()), t_start=t_start, t_end=t_end,
    )


def compose(a: PreintegratedImu, b: PreintegratedImu):
    """Concatenate two adjacent preintegrated segments (deltas only)."""
    if abs(a.t_end - b.t_start) > 1e-9:
        raise InvalidArgumentError("segments are not adjacent")
    return PreintegratedImu(
        dR=a.dR @ b.dR,
        dv=a.dv + a.dR @ b.dv,
        dp=a.dp + a.dv * b.dt_total + a.dR @ b.dp,
        dt_total=a.dt_total + b.dt_total,
        covariance=np.zeros((9, 9)),
        J_bias=np.zeros((9, 6)),
        bias_lin=a.bias_lin,
        t_start=a.t_start,
        t_end=b.t_end,
    )


def preint_residual(R_i, p_i, v_i, b_accel_i, b_gyro_i, R_j, p_j, v_j,
                    gravity, pim: PreintegratedImu):
    """9-DOF preintegration residual (rotation Log, velocity, position).

    Uses the kinematic model pddot = R(a_bar - b_a) - g implied by the
    accelerometer convention a_bar = R^T (pddot + g) + b_a.
    """
    dR, dv, dp = pim.corrected(b_accel_i, b_gyro_i)
    dt = pim.dt_total
    g = np.asarray(gravity, dtype=float)
    r_rot = so3_log(dR.T @ R_i.T @ R_j, validate=False)
    r_vel = R_i.T @ (v_j - v_i + g * dt) - dv
    r_pos = R_i.T @ (p_j - p_i - v_i * dt + 0.5 * g * dt * dt) - dp
    return np.concatenate([r_rot, r_vel, r_pos])


def bias_rw_residual_dt(b_prev, b_next, dt, accel_rw=1.0, gyro_rw=1.0):
    """Whitened bias random-walk residual between consecutive frames.

    ``b_prev``/``b_next`` are (b_accel, b_gyro) pairs; the step standard
    deviation over dt is density * sqrt(dt).
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    da = (np.asarray(b_next[0], float) - np.asarray(b_prev[0], float)) / (
        accel_rw * np.sqrt(dt)
    )
    dg = (np.asarray(b_next[1], float) - np.asarray(b_prev[1], float)) / (
        gyro_rw * np.sqrt(dt)
    )
    return np.concatenate([da, dg])
