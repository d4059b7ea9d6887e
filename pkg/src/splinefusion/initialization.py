"""Initialization pipeline: spline fitting, similarity alignment, IMU bootstrap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bsplines as bs
from .errors import (
    BootstrapUnavailableError,
    DegenerateConfigurationError,
    InvalidArgumentError,
)
from .rotations import Pose, so3_exp, so3_log, slerp
from .solver import (
    EUCLIDEAN,
    ROTATION,
    FactorGroup,
    Problem,
    Slot,
    SolveOptions,
    solve,
)


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform acting as ``y = s * R @ x + t``."""

    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.s <= 0:
            raise InvalidArgumentError("similarity scale must be positive")

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.s * (self.R @ x.T).T + self.t

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        return Sim3Transform(
            self.s * other.s, self.R @ other.R, self.s * self.R @ other.t + self.t
        )

    def inverse(self) -> "Sim3Transform":
        Rinv = self.R.T
        return Sim3Transform(1.0 / self.s, Rinv, -Rinv @ self.t / self.s)

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))


def umeyama(source, target):
    """Closed-form similarity aligning ``source`` onto ``target`` points.

    Minimizes ``sum || target_i - (s R source_i + t) ||^2`` with the
    determinant-sign correction for reflections.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise InvalidArgumentError("point lists must both be (N, 3)")
    n = source.shape[0]
    if n < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    cov = xt.T @ xs / n
    U, d, Vt = np.linalg.svd(cov)
    if d[1] < max(d[0], 1e-300) * 1e-9:
        raise DegenerateConfigurationError(
            "correspondences are (near) collinear; similarity is rank deficient"
        )
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = (xs * xs).sum() / n
    s = float(np.trace(np.diag(d) @ S) / var_s)
    t = mu_t - s * R @ mu_s
    return Sim3Transform(s, R, t)


class _PnPGroup(FactorGroup):
    """Reprojection residuals for a single camera pose refinement."""

    name = "pnp"
    dim = 2

    def __init__(self, camera, points, xy_norm):
        self.camera = camera
        self.points = points
        self.xy = xy_norm  # normalized image coordinates

    def build(self, problem, state):
        slots = [
            Slot(problem.block_id("pnp_R"), ROTATION, 3),
            Slot(problem.block_id("pnp_p"), EUCLIDEAN, 3),
        ]
        return None, slots

    def kernel(self, ctx, gathered):
        R_wc = gathered[0][0]
        p_wc = gathered[1][0]
        pc = (self.points - p_wc) @ R_wc
        z = np.where(pc[:, 2] > 1e-6, pc[:, 2], 1e-6)
        return np.stack([pc[:, 0] / z, pc[:, 1] / z], axis=1) - self.xy


def pnp_dlt(camera, points_world, pixels, refine=True):
    """Camera pose from 3D-2D correspondences (DLT plus LM refinement).

    Returns the world-from-camera pose (R_wc, p_wc).  Needs >= 6 points in
    general position; solves for the projection matrix in normalized image
    coordinates, orthonormalizes the rotation part, then by default refines
    the pose by minimizing the reprojection error.
    """
    pts = np.asarray(points_world, dtype=float)
    px = np.asarray(pixels, dtype=float)
    n = pts.shape[0]
    if n < 6 or px.shape != (n, 2):
        raise DegenerateConfigurationError("PnP needs >= 6 correspondences")
    xn = (px[:, 0] - camera.cx) / camera.fx
    yn = (px[:, 1] - camera.cy) / camera.fy
    mu = pts.mean(axis=0)
    sc = np.linalg.norm(pts - mu, axis=1).mean()
    if sc < 1e-9:
        raise DegenerateConfigurationError("coincident PnP points")
    Xh = np.hstack([(pts - mu) / sc, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -yn[:, None] * Xh
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] < 1e-12 * sv[0]:
        raise DegenerateConfigurationError("degenerate PnP configuration")
    P = Vt[-1].reshape(3, 4)
    M = P[:, :3]
    # cheirality: camera-frame depths must be positive for most points
    if np.median(Xh @ P[2]) < 0:
        P = -P
        M = -M
    U, d, Vt3 = np.linalg.svd(M)
    if d[2] < 1e-9 * d[0]:
        raise DegenerateConfigurationError("rank-deficient PnP rotation")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt3) < 0:
        S[2, 2] = -1.0
    R_cw = U @ S @ Vt3
    det_scale = np.trace(np.diag(d) @ S) / 3.0
    # undo the 3D normalization: p_cam = R_cw (X - mu) + t_eff
    t_eff = sc * P[:, 3] / det_scale
    T_wc = Pose(R_cw, t_eff - R_cw @ mu).inverse()
    if not refine:
        return T_wc

    problem = Problem()
    problem.add_rotation("pnp_R", T_wc.R)
    problem.add_euclidean("pnp_p", T_wc.p)
    problem.add_group(_PnPGroup(camera, pts, np.stack([xn, yn], axis=1)))
    state, _ = solve(problem, SolveOptions(max_iter=15, rel_tol=1e-10))
    return Pose(
        problem.block_value(state, "pnp_R").copy(),
        problem.block_value(state, "pnp_p").copy(),
    )


# ---------------------------------------------------------------------------
# spline fitting to discrete poses


def _interp_positions(times, positions, query):
    out = np.empty((len(query), 3))
    for dim in range(3):
        out[:, dim] = np.interp(query, times, positions[:, dim])
    return out


def _interp_rotations(times, rotations, query):
    idx = np.clip(np.searchsorted(times, query, side="right") - 1, 0, len(times) - 2)
    t0 = times[idx]
    t1 = times[idx + 1]
    alpha = np.clip((query - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0, 1.0)
    out = np.empty((len(query), 3, 3))
    for i, (j, a) in enumerate(zip(idx, alpha)):
        out[i] = slerp(rotations[j], rotations[j + 1], float(a))
    return out


class R3FitGroup(FactorGroup):
    """Position-spline fitting residuals ``p(u(t_j)) - p_bar_j``."""

    name = "r3_fit"
    dim = 3

    def __init__(self, grid, first_block, seg, u, targets, weight=1.0):
        self.grid = grid
        self.first_block = first_block
        self.seg = seg
        self.u = u
        self.targets = targets
        self.weight = weight
        self._coeffs = bs.window_node_coefficients(grid.order, u)

    def build(self, problem, state):
        slots = [
            Slot(self.first_block + self.seg + j, EUCLIDEAN, 3)
            for j in range(self.grid.order)
        ]
        return None, slots

    def kernel(self, ctx, gathered):
        windows = np.stack(gathered, axis=-2)
        val = bs.r3_window_eval(windows, self.u, self.grid.order, self.grid.dt)
        return (val - self.targets) * self.weight

    def analytic_jacobians(self, ctx, gathered):
        eye = np.eye(3)
        return {
            j: self.weight * self._coeffs[:, j, None, None] * eye[None, :, :]
            for j in range(self.grid.order)
        }


class SO3FitGroup(FactorGroup):
    """Rotation-spline fitting residuals ``Log(R(u)^T R_bar)``."""

    name = "so3_fit"
    dim = 3

    def __init__(self, grid, first_block, seg, u, targets, weight=1.0):
        self.grid = grid
        self.first_block = first_block
        self.seg = seg
        self.u = u
        self.targets = targets
        self.weight = weight

    def build(self, problem, state):
        slots = [
            Slot(self.first_block + self.seg + j, ROTATION, 3)
            for j in range(self.grid.order)
        ]
        return None, slots

    def kernel(self, ctx, gathered):
        windows = np.stack(gathered, axis=-3)
        R = bs.so3_window_eval(windows, self.u, self.grid.order)
        return self.weight * so3_log(
            np.swapaxes(R, -1, -2) @ self.targets, validate=False
        )


@dataclass
class SplineFit:
    position: bs.SplineR3
    rotation: bs.SplineSO3
    report: object
    rms_position: float
    rms_rotation: float


def fit_spline_to_poses(times, positions, rotations, order, node_hz,
                        t_start=None, t_end=None, samples_per_interval=1,
                        max_iter=25, rel_tol=1e-12):
    """Fit position and rotation splines to timestamped poses.

    Control nodes are initialized by linear interpolation (SLERP for
    rotations) at the knot times and refined by minimizing the summed
    position and Log-rotation errors at the measurement times.  By default
    one residual is placed at every input pose time; ``samples_per_interval``
    > 1 adds interpolated measurements between consecutive poses.
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    if len(times) < order:
        raise InvalidArgumentError(
            f"need at least order={order} poses, got {len(times)}"
        )
    dt = 1.0 / node_hz
    if times[-1] - times[0] < order * dt * 0.5:
        raise InvalidArgumentError("pose span too short for the requested grid")
    grid = bs.grid_covering(
        times[0] if t_start is None else t_start,
        times[-1] if t_end is None else t_end,
        dt,
        order,
    )

    node_times = grid.t0 + np.arange(grid.count) * grid.dt
    clamped = np.clip(node_times, times[0], times[-1])
    pos_nodes = _interp_positions(times, positions, clamped)
    rot_nodes = _interp_rotations(times, rotations, clamped)

    if samples_per_interval > 1:
        qs = []
        for a, b in zip(times[:-1], times[1:]):
            qs.append(np.linspace(a, b, samples_per_interval, endpoint=False))
        query = np.concatenate(qs + [times[-1:]])
    else:
        query = times
    query = query[(query >= grid.domain[0]) & (query < grid.domain[1])]
    tgt_pos = _interp_positions(times, positions, query)
    tgt_rot = _interp_rotations(times, rotations, query)

    problem = Problem()
    first_pos = None
    for i in range(grid.count):
        bid = problem.add_euclidean(f"pos{i}", pos_nodes[i])
        if first_pos is None:
            first_pos = bid
    first_rot = None
    for i in range(grid.count):
        bid = problem.add_rotation(f"rot{i}", rot_nodes[i])
        if first_rot is None:
            first_rot = bid

    seg, u = grid.normalized_times(query)
    problem.add_group(R3FitGroup(grid, first_pos, seg, u, tgt_pos))
    problem.add_group(SO3FitGroup(grid, first_rot, seg, u, tgt_rot))

    state, report = solve(
        problem, SolveOptions(max_iter=max_iter, rel_tol=rel_tol)
    )
    fitted_pos = np.stack(
        [problem.block_value(state, f"pos{i}") for i in range(grid.count)]
    )
    fitted_rot = np.stack(
        [problem.block_value(state, f"rot{i}") for i in range(grid.count)]
    )
    pos_spline = bs.SplineR3(grid, fitted_pos)
    rot_spline = bs.SplineSO3(grid, fitted_rot)
    ep = pos_spline.sample_many(query) - tgt_pos
    er = so3_log(
        np.swapaxes(rot_spline.sample_many(query), -1, -2) @ tgt_rot, validate=False
    )
    return SplineFit(
        position=pos_spline,
        rotation=rot_spline,
        report=report,
        rms_position=float(np.sqrt((ep**2).sum(axis=1).mean())),
        rms_rotation=float(np.sqrt((er**2).sum(axis=1).mean())),
    )


# ---------------------------------------------------------------------------
# GPS alignment (similarity + antenna lever arm + GPS-IMU time offset)


class _GpsAlignGroup(FactorGroup):
    """Residuals ``p_bar - (s R_wg p_gb(tau) + t + s R_wg R_gb(tau) p_ant)``
    with ``tau = t_gps + t_offset``."""

    name = "gps_align"
    dim = 3

    def __init__(self, pos_spline, rot_spline, gps_t, gps_p, block_names):
        self.pos_spline = pos_spline
        self.rot_spline = rot_spline
        self.gps_t = gps_t
        self.gps_p = gps_p
        self.block_names = block_names
        lo, hi = pos_spline.grid.domain
        self._clip = (lo + 1e-9, np.nextafter(hi, lo))

    def build(self, problem, state):
        kinds = [ROTATION, EUCLIDEAN, EUCLIDEAN, EUCLIDEAN, EUCLIDEAN]
        dims = [3, 3, 1, 3, 1]
        slots = [
            Slot(problem.block_id(nm), kind, d)
            for nm, kind, d in zip(self.block_names, kinds, dims)
        ]
        return None, slots

    def kernel(self, ctx, gathered):
        R_wg, t_wg, scale, p_ant, t_off = gathered
        tau = np.clip(self.gps_t + t_off[..., 0], *self._clip)
        p_gb = self.pos_spline.sample_many(tau)
        R_gb = self.rot_spline.sample_many(tau)
        R_wb = R_wg @ R_gb
        pred = (
            scale * np.einsum("...ij,...j->...i", R_wg, p_gb)
            + t_wg
            + scale * np.einsum("...ij,...j->...i", R_wb, p_ant)
        )
        return self.gps_p - pred


@dataclass
class AlignResult:
    sim3: Sim3Transform
    p_antenna: np.ndarray
    t_gps_imu: float
    report: object
    low_information: list = field(default_factory=list)


def align_to_world(pos_spline, rot_spline, gps_t, gps_p, init=None,
                   estimate_antenna=True, estimate_offset=True,
                   offset_bound=0.1, max_iter=50):
    """Estimate the world-from-spline similarity, antenna lever arm and
    GPS-IMU time offset from GPS fixes.

    The initial similarity comes from :func:`umeyama` between spline samples
    and fixes (antenna and offset assumed zero there); the joint refinement
    then minimizes the full antenna-aware prediction error.
    """
    gps_t = np.asarray(gps_t, dtype=float)
    gps_p = np.asarray(gps_p, dtype=float)
    lo, hi = pos_spline.grid.domain
    margin = offset_bound + 0.02
    keep = (gps_t >= lo + margin) & (gps_t < hi - margin)
    gps_t = gps_t[keep]
    gps_p = gps_p[keep]
    if gps_t.size < 10 or gps_t[-1] - gps_t[0] < 2.0:
        raise InvalidArgumentError("need >= 10 GPS fixes spanning >= 2 s")

    if init is None:
        init = umeyama(pos_spline.sample_many(gps_t), gps_p)

    problem = Problem()
    names = ["align_R", "align_t", "align_s", "align_p_ant", "align_t_off"]
    problem.add_rotation(names[0], init.R)
    problem.add_euclidean(names[1], init.t)
    problem.add_euclidean(names[2], np.array([init.s]), bounds=(1e-3, 1e3))
    problem.add_euclidean(
        names[3], np.zeros(3), fixed=not estimate_antenna
    )
    problem.add_euclidean(
        names[4], np.zeros(1), fixed=not estimate_offset,
        bounds=(-offset_bound, offset_bound),
    )
    group = _GpsAlignGroup(pos_spline, rot_spline, gps_t, gps_p, names)
    problem.add_group(group)
    state, report = solve(problem, SolveOptions(max_iter=max_iter))

    low_info = []
    if estimate_offset:
        _, J = problem.linearize(state)
        col = problem.blocks[problem.block_id(names[4])].col
        colnorm = float(np.sqrt(J[:, col].multiply(J[:, col]).sum()))
        if colnorm < 1e-3 * gps_t.size ** 0.5:
            low_info.append("t_gps_imu")

    sim3 = Sim3Transform(
        float(problem.block_value(state, names[2])[0]),
        problem.block_value(state, names[0]).copy(),
        problem.block_value(state, names[1]).copy(),
    )
    return AlignResult(
        sim3=sim3,
        p_antenna=problem.block_value(state, names[3]).copy(),
        t_gps_imu=float(problem.block_value(state, names[4])[0]),
        report=report,
        low_information=low_info,
    )


# ---------------------------------------------------------------------------
# IMU-based scale bootstrap (no-GPS branch)


@dataclass
class BootstrapResult:
    sim3: Sim3Transform  # gravity-aligned frame from the scaleless frame
    gravity_body: np.ndarray  # mean static accelerometer reading
    static_end: float  # end of the detected static window (seconds)


def imu_scale_bootstrap(pos_spline_g, rot_spline_g, imu_t, gyro, accel,
                        static_window=1.0, motion_duration=3.0,
                        accel_sigma=0.05, gravity_mag=9.81):
    """Recover trajectory scale by dead reckoning a short IMU segment.

    The gravity direction comes from accelerometer samples in an initial
    static window; a few seconds of IMU integration after it produce a
    metric trajectory segment that is aligned to the scaleless spline with
    :func:`umeyama`, yielding the scale and the gravity-aligned transform.
    """
    imu_t = np.asarray(imu_t, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    static = imu_t <= imu_t[0] + static_window
    if static.sum() < 10:
        raise BootstrapUnavailableError("too few samples in the static window")
    thr = (3.0 * max(accel_sigma, 1e-4)) ** 2
    if float(accel[static].var(axis=0).max()) > thr:
        raise BootstrapUnavailableError(
            "no static prefix detected (accelerometer variance above threshold)"
        )
    a_mean = accel[static].mean(axis=0)

    moving = imu_t > imu_t[0] + static_window
    if not np.any(moving):
        raise BootstrapUnavailableError("no data after the static window")
    motion_power = np.linalg.norm(gyro[moving], axis=1).max() + np.abs(
        np.linalg.norm(accel[moving], axis=1) - np.linalg.norm(a_mean)
    ).max()
    if motion_power < 0.02:
        raise BootstrapUnavailableError("no motion after the static window")
    t_motion0 = imu_t[moving][0]
    if imu_t[-1] - t_motion0 < motion_duration:
        raise BootstrapUnavailableError(
            f"need >= {motion_duration} s of motion after the static window"
        )

    # initial attitude: a static accelerometer reads a_bar = R^T g_world
    # under the generative convention a_bar = R^T (pddot + g), so align the
    # mean reading with the world gravity direction
    g_world = np.array([0.0, 0.0, -gravity_mag])
    a_dir = a_mean / np.linalg.norm(a_mean)
    g_dir = g_world / gravity_mag
    v = np.cross(a_dir, g_dir)
    c = float(np.dot(a_dir, g_dir))
    if np.linalg.norm(v) < 1e-12:
        R_ib = np.eye(3) if c > 0 else so3_exp(np.array([np.pi, 0.0, 0.0]))
    else:
        axis = v / np.linalg.norm(v)
        R_ib = so3_exp(axis * np.arccos(np.clip(c, -1.0, 1.0)))
    # R_ib maps body vectors to the gravity-aligned frame I

    sel = (imu_t >= t_motion0) & (imu_t <= t_motion0 + motion_duration)
    ts = imu_t[sel]
    ws = gyro[sel]
    accs = accel[sel]
    R = R_ib
    v_i = np.zeros(3)
    p_i = np.zeros(3)
    dr_t = [ts[0]]
    dr_p = [p_i.copy()]
    for n in range(len(ts) - 1):
        dt = ts[n + 1] - ts[n]
        w_mid = 0.5 * (ws[n] + ws[n + 1])
        a_mid = 0.5 * (accs[n] + accs[n + 1])
        R_half = R @ so3_exp(w_mid * dt * 0.5)
        acc_w = R_half @ a_mid - g_world
        p_i = p_i + v_i * dt + 0.5 * acc_w * dt * dt
        v_i = v_i + acc_w * dt
        R = R @ so3_exp(w_mid * dt)
        dr_t.append(ts[n + 1])
        dr_p.append(p_i.copy())
    dr_t = np.array(dr_t)
    dr_p = np.stack(dr_p)
    if np.linalg.norm(dr_p[-1] - dr_p[0]) < 1e-3:
        raise BootstrapUnavailableError("dead-reckoned segment shows no motion")

    lo, hi = pos_spline_g.grid.domain
    keep = (dr_t >= lo) & (dr_t < hi)
    if keep.sum() < 3:
        raise BootstrapUnavailableError("dead-reckoned segment outside spline domain")
    src = pos_spline_g.sample_many(dr_t[keep])
    sim3 = umeyama(src, dr_p[keep])
    return BootstrapResult(sim3=sim3, gravity_body=a_mean,
                           static_end=imu_t[0] + static_window)
