"""Uniform cumulative B-splines over R^3 and SO(3).

A spline of order ``k`` with control nodes ``x_0..x_{N}`` on the uniform
grid ``t_i = t0 + i*dt`` is sampled on segment ``i`` (local fraction
``u in [0, 1)``) from the window ``x_i..x_{i+k-1}``:

    x(u) = x_i + sum_{j=1..k-1} lambda_j(u) * (x_{i+j} - x_{i+j-1})

and on SO(3) from

    R(u) = R_i * prod_{j=1..k-1} Exp(lambda_j(u) * Log(R_{i+j-1}^T R_{i+j})).

The cumulative blending coefficients ``lambda_j(u)`` are polynomials in
``u`` whose exact rational coefficient matrices are precomputed per order.
Time derivatives cost O(k): the difference vectors are formed once and
combined with derivative blending coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError, OutOfDomainError
from .rotations import is_rotation, quat_to_rotation, rotation_to_quat, so3_exp, so3_log

MIN_ORDER = 2
MAX_ORDER = 8


# ---------------------------------------------------------------------------
# blending matrices


@lru_cache(maxsize=None)
def basis_matrix(order):
    """Uniform B-spline basis matrix M of shape (order, order).

    Row ``s`` holds the polynomial coefficients (in increasing powers of
    ``u``) weighting window node ``s``:  x(u) = sum_s (M[s] . u_powers) x_{i+s}.
    Entries are exact rationals converted to float.
    """
    k = _check_order(order)
    M = np.empty((k, k))
    for s in range(k):
        for n in range(k):
            acc = Fraction(0)
            for l in range(s, k):
                acc += (-1) ** (l - s) * math.comb(k, l - s) * Fraction(k - 1 - l) ** (
                    k - 1 - n
                )
            M[s, n] = float(Fraction(math.comb(k - 1, n), math.factorial(k - 1)) * acc)
    return M


@lru_cache(maxsize=None)
def cumulative_matrix(order):
    """Cumulative blending matrix C of shape (order-1, order).

    Row ``j-1`` gives the polynomial coefficients of ``lambda_j(u)`` for
    ``j = 1..k-1``:  lambda_j(u) = sum_n C[j-1, n] u^n.
    """
    M = basis_matrix(order)
    return np.cumsum(M[::-1], axis=0)[::-1][1:].copy()


def _check_order(order):
    k = int(order)
    if not MIN_ORDER <= k <= MAX_ORDER:
        raise InvalidArgumentError(f"unsupported spline order {order} (need 2..8)")
    return k


@dataclass(frozen=True)
class BlendingCoefficients:
    """Cumulative blending values and their u-derivatives at one sample.

    ``lam[j-1] = lambda_j(u)`` for j = 1..k-1.  ``dlam`` and ``ddlam`` are
    derivatives with respect to ``u``; divide by dt (dt^2) downstream for
    time derivatives.
    """

    lam: np.ndarray
    dlam: np.ndarray
    ddlam: np.ndarray


def _u_powers(u, k):
    u = np.asarray(u, dtype=float)
    return u[..., None] ** np.arange(k)


def blending(order, u):
    """Blending coefficients lambda_j(u) and u-derivatives for one fraction."""
    k = _check_order(order)
    u = float(u)
    if not 0.0 <= u < 1.0:
        raise InvalidArgumentError(f"fraction {u} outside [0, 1)")
    C = cumulative_matrix(k)
    lam, dlam, ddlam = blending_many(k, np.array([u]))
    return BlendingCoefficients(lam[0], dlam[0], ddlam[0])


def blending_many(order, u):
    """Vectorized blending: returns (lam, dlam, ddlam), each (..., k-1)."""
    k = _check_order(order)
    C = cumulative_matrix(k)
    pow0 = _u_powers(u, k)
    n = np.arange(k)
    lam = pow0 @ C.T
    d1 = C * n
    dlam = pow0[..., : k - 1] @ d1[:, 1:].T
    d2 = C * n * (n - 1)
    ddlam = pow0[..., : k - 2] @ d2[:, 2:].T if k > 2 else np.zeros_like(lam)
    return lam, dlam, ddlam


def window_node_coefficients(order, u, derivative=0):
    """Per-window-node coefficients c_s of the R^3 sample or its u-derivative.

    x^(d)(u) = sum_s c_s x_{i+s} (times 1/dt^d for time derivatives); shape
    (..., order).
    """
    lam, dlam, ddlam = blending_many(order, u)
    arr = (lam, dlam, ddlam)[derivative]
    head = np.ones(arr.shape[:-1] + (1,)) if derivative == 0 else np.zeros(
        arr.shape[:-1] + (1,)
    )
    full = np.concatenate([head, arr, np.zeros(arr.shape[:-1] + (1,))], axis=-1)
    return full[..., :-1] - full[..., 1:]


# ---------------------------------------------------------------------------
# knot grid


@dataclass(frozen=True)
class KnotGrid:
    """Uniform control-node grid: ``t_i = t0 + i*dt``, ``count`` nodes, order k.

    The valid half-open sampling domain is
    ``[t0, t0 + (count - order + 1) * dt)``; each sample on segment ``i``
    uses the ``order`` nodes ``i..i+order-1``.
    """

    t0: float
    dt: float
    count: int
    order: int

    def __post_init__(self):
        _check_order(self.order)
        if not (np.isfinite(self.t0) and np.isfinite(self.dt)) or self.dt <= 0:
            raise InvalidArgumentError("knot grid needs finite t0 and dt > 0")
        if self.count < self.order:
            raise InvalidArgumentError(
                f"need at least order={self.order} nodes, got {self.count}"
            )

    @property
    def num_segments(self):
        return self.count - self.order + 1

    @property
    def domain(self):
        return (self.t0, self.t0 + self.num_segments * self.dt)

    def normalized_time(self, t):
        """Map a time to (segment_index, u) with u in [0, 1)."""
        t = float(t)
        lo, hi = self.domain
        if not np.isfinite(t) or t < lo or t >= hi:
            raise OutOfDomainError(t, lo, hi)
        h = (t - self.t0) / self.dt
        i = min(int(np.floor(h)), self.num_segments - 1)
        u = h - i
        if u >= 1.0:  # float fuzz just below a knot
            u = np.nextafter(1.0, 0.0)
        return i, max(u, 0.0)

    def normalized_times(self, ts):
        """Vectorized ``normalized_time``; raises on any out-of-domain time."""
        ts = np.asarray(ts, dtype=float)
        lo, hi = self.domain
        bad = ~np.isfinite(ts) | (ts < lo) | (ts >= hi)
        if np.any(bad):
            tb = float(ts[np.nonzero(bad)[0][0]] if ts.ndim else ts)
            raise OutOfDomainError(tb, lo, hi)
        h = (ts - self.t0) / self.dt
        i = np.minimum(np.floor(h).astype(int), self.num_segments - 1)
        u = np.clip(h - i, 0.0, np.nextafter(1.0, 0.0))
        return i, u

    def contains(self, ts):
        ts = np.asarray(ts, dtype=float)
        lo, hi = self.domain
        return (ts >= lo) & (ts < hi)


def grid_covering(t_min, t_max, dt, order):
    """Smallest KnotGrid with the given spacing whose domain covers [t_min, t_max]."""
    span = max(t_max - t_min, 0.0)
    segments = max(int(np.ceil(span / dt + 1e-9)) + 1, 1)
    return KnotGrid(t0=t_min, dt=dt, count=segments + order - 1, order=order)


# ---------------------------------------------------------------------------
# vectorized window kernels (shared with the batch estimators)


def r3_window_eval(windows, u, order, dt, derivative=0):
    """Evaluate an R^3 spline from gathered node windows.

    windows: (..., k, 3) node windows, u: (...,) fractions.
    """
    lam, dlam, ddlam = blending_many(order, u)
    diffs = windows[..., 1:, :] - windows[..., :-1, :]
    if derivative == 0:
        return windows[..., 0, :] + np.einsum("...j,...jd->...d", lam, diffs)
    if derivative == 1:
        return np.einsum("...j,...jd->...d", dlam, diffs) / dt
    if derivative == 2:
        return np.einsum("...j,...jd->...d", ddlam, diffs) / (dt * dt)
    raise InvalidArgumentError(f"derivative order {derivative} not in (0, 1, 2)")


def so3_window_diffs(rot_windows):
    """Difference vectors Log(R_{j-1}^T R_j) along each window, (..., k-1, 3)."""
    Ra = np.swapaxes(rot_windows[..., :-1, :, :], -1, -2)
    return so3_log(Ra @ rot_windows[..., 1:, :, :], validate=False)


def so3_window_eval(rot_windows, u, order):
    """Evaluate an SO(3) cumulative spline from gathered node windows."""
    lam, _, _ = blending_many(order, u)
    diffs = so3_window_diffs(rot_windows)
    R = rot_windows[..., 0, :, :].copy()
    for j in range(order - 1):
        R = R @ so3_exp(lam[..., j, None] * diffs[..., j, :])
    return R


def so3_window_angvel(rot_windows, u, order, dt):
    """Body-frame angular velocity of the SO(3) spline, (..., 3) rad/s.

    Accumulates omega_j = A_j^T omega_{j-1} + dlambda_j * d_j along the
    factor chain, which keeps the cost linear in the order.
    """
    lam, dlam, _ = blending_many(order, u)
    diffs = so3_window_diffs(rot_windows)
    omega = np.zeros(rot_windows.shape[:-3] + (3,))
    for j in range(order - 1):
        A = so3_exp(lam[..., j, None] * diffs[..., j, :])
        omega = np.einsum("...ba,...b->...a", A, omega) + dlam[..., j, None] * diffs[
            ..., j, :
        ]
    return omega / dt


def so3_window_eval_with_angvel(rot_windows, u, order, dt):
    """Evaluate rotation and body angular velocity in one pass."""
    lam, dlam, _ = blending_many(order, u)
    diffs = so3_window_diffs(rot_windows)
    R = rot_windows[..., 0, :, :].copy()
    omega = np.zeros(rot_windows.shape[:-3] + (3,))
    for j in range(order - 1):
        A = so3_exp(lam[..., j, None] * diffs[..., j, :])
        R = R @ A
        omega = np.einsum("...ba,...b->...a", A, omega) + dlam[..., j, None] * diffs[
            ..., j, :
        ]
    return R, omega / dt


# ---------------------------------------------------------------------------
# spline containers


@dataclass
class SplineR3:
    """Uniform B-spline over R^3 (positions, biases, ...)."""

    grid: KnotGrid
    nodes: np.ndarray  # (count, 3)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.shape != (self.grid.count, 3):
            raise InvalidArgumentError(
                f"nodes shape {self.nodes.shape} != ({self.grid.count}, 3)"
            )
        if not np.all(np.isfinite(self.nodes)):
            raise InvalidArgumentError("non-finite spline nodes")

    def sample(self, t, derivative=0):
        """Value (derivative 0), d/dt (1), or d^2/dt^2 (2) at time t."""
        i, u = self.grid.normalized_time(t)
        window = self.nodes[i : i + self.grid.order]
        return r3_window_eval(window, np.float64(u), self.grid.order, self.grid.dt,
                              derivative)

    def sample_many(self, ts, derivative=0):
        i, u = self.grid.normalized_times(ts)
        idx = i[..., None] + np.arange(self.grid.order)
        return r3_window_eval(self.nodes[idx], u, self.grid.order, self.grid.dt,
                              derivative)


@dataclass
class SplineSO3:
    """Uniform cumulative B-spline over SO(3)."""

    grid: KnotGrid
    nodes: np.ndarray  # (count, 3, 3)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.shape != (self.grid.count, 3, 3):
            raise InvalidArgumentError(
                f"nodes shape {self.nodes.shape} != ({self.grid.count}, 3, 3)"
            )
        if not is_rotation(self.nodes):
            raise InvalidArgumentError("spline nodes are not rotations")

    def sample(self, t):
        i, u = self.grid.normalized_time(t)
        window = self.nodes[i : i + self.grid.order]
        return so3_window_eval(window, np.float64(u), self.grid.order)

    def sample_many(self, ts):
        i, u = self.grid.normalized_times(ts)
        idx = i[..., None] + np.arange(self.grid.order)
        return so3_window_eval(self.nodes[idx], u, self.grid.order)

    def angular_velocity(self, t):
        """Body-frame angular velocity omega with Rdot = R [omega]_x."""
        if self.grid.order < 3:
            raise InvalidArgumentError("angular velocity needs order >= 3")
        i, u = self.grid.normalized_time(t)
        window = self.nodes[i : i + self.grid.order]
        return so3_window_angvel(window, np.float64(u), self.grid.order, self.grid.dt)

    def angular_velocity_many(self, ts):
        if self.grid.order < 3:
            raise InvalidArgumentError("angular velocity needs order >= 3")
        i, u = self.grid.normalized_times(ts)
        idx = i[..., None] + np.arange(self.grid.order)
        return so3_window_angvel(self.nodes[idx], u, self.grid.order, self.grid.dt)


# ---------------------------------------------------------------------------
# serialization


def spline_pair_to_dict(pos: SplineR3 | None, rot: SplineSO3 | None):
    """JSON-ready dict {order, t0_ns, dt_ns, positions, rotations (wxyz)}."""
    grid = (pos or rot).grid
    if pos is not None and rot is not None and pos.grid != rot.grid:
        raise InvalidArgumentError("position and rotation splines must share a grid")
    return {
        "order": grid.order,
        "t0_ns": int(round(grid.t0 * 1e9)),
        "dt_ns": int(round(grid.dt * 1e9)),
        "positions": pos.nodes.tolist() if pos is not None else [],
        "rotations": rotation_to_quat(rot.nodes).tolist() if rot is not None else [],
    }


def spline_pair_from_dict(data):
    """Inverse of :func:`spline_pair_to_dict`; returns (SplineR3|None, SplineSO3|None)."""
    positions = np.asarray(data["positions"], dtype=float)
    rotations = np.asarray(data["rotations"], dtype=float)
    count = len(positions) if positions.size else len(rotations)
    grid = KnotGrid(
        t0=data["t0_ns"] * 1e-9,
        dt=data["dt_ns"] * 1e-9,
        count=count,
        order=data["order"],
    )
    pos = SplineR3(grid, positions) if positions.size else None
    rot = SplineSO3(grid, quat_to_rotation(rotations)) if rotations.size else None
    return pos, rot


def save_spline_pair(path, pos, rot):
    with open(path, "w") as f:
        json.dump(spline_pair_to_dict(pos, rot), f)


def load_spline_pair(path):
    with open(path) as f:
        return spline_pair_from_dict(json.load(f))
