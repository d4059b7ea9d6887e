import json

import numpy as np
import pytest
from scipy.interpolate import BSpline

from splinefusion import bsplines as bs
from splinefusion.errors import InvalidArgumentError, OutOfDomainError
from splinefusion.rotations import random_rotation, so3_exp, so3_log


def scipy_reference(grid, nodes):
    """Independent reference: an unclamped uniform scipy BSpline whose domain
    matches KnotGrid (control point j is supported on segments starting at
    knot j - order + 1)."""
    k = grid.order
    knots = grid.t0 + (np.arange(grid.count + k) - (k - 1)) * grid.dt
    return BSpline(knots, nodes, k - 1, extrapolate=False)


def random_spline(rng, order, count=None, t0=None, dt=None):
    count = count or int(rng.integers(order + 2, order + 12))
    t0 = float(rng.uniform(-5, 5)) if t0 is None else t0
    dt = float(rng.uniform(0.05, 1.5)) if dt is None else dt
    grid = bs.KnotGrid(t0=t0, dt=dt, count=count, order=order)
    nodes = rng.normal(scale=3.0, size=(count, 3))
    return bs.SplineR3(grid, nodes)


def test_r3_matches_scipy_reference(rng):
    """200 random splines across orders 4..7 agree with scipy to 1e-12."""
    for trial in range(200):
        order = 4 + trial % 4
        spline = random_spline(rng, order)
        ref = scipy_reference(spline.grid, spline.nodes)
        lo, hi = spline.grid.domain
        ts = rng.uniform(lo, hi - 1e-9, size=20)
        ours = spline.sample_many(ts)
        theirs = ref(ts)
        assert np.max(np.abs(ours - theirs)) < 1e-12


def test_r3_derivatives_match_scipy(rng):
    for trial in range(20):
        order = 4 + trial % 4
        spline = random_spline(rng, order)
        ref = scipy_reference(spline.grid, spline.nodes)
        lo, hi = spline.grid.domain
        ts = rng.uniform(lo, hi - 1e-9, size=20)
        for d in (1, 2):
            ours = spline.sample_many(ts, derivative=d)
            theirs = ref.derivative(d)(ts)
            scale = max(np.abs(theirs).max(), 1.0)
            assert np.max(np.abs(ours - theirs)) / scale < 1e-10


def test_r3_derivatives_match_finite_differences(rng):
    h = 1e-6
    for order in (4, 5, 6, 7):
        spline = random_spline(rng, order, count=order + 8, dt=0.5)
        lo, hi = spline.grid.domain
        ts = rng.uniform(lo + 2 * h, hi - 2 * h, size=15)
        for t in ts:
            v1 = spline.sample(t, derivative=1)
            fd1 = (spline.sample(t + h) - spline.sample(t - h)) / (2 * h)
            assert np.linalg.norm(v1 - fd1) / max(np.linalg.norm(fd1), 1.0) < 1e-6
            v2 = spline.sample(t, derivative=2)
            fd2 = (
                spline.sample(t + h, derivative=1)
                - spline.sample(t - h, derivative=1)
            ) / (2 * h)
            assert np.linalg.norm(v2 - fd2) / max(np.linalg.norm(fd2), 1.0) < 1e-6


def random_so3_spline(rng, order, count=None, scale=0.5):
    count = count or order + 8
    grid = bs.KnotGrid(t0=0.0, dt=0.4, count=count, order=order)
    nodes = [random_rotation(rng)]
    for _ in range(count - 1):
        nodes.append(nodes[-1] @ so3_exp(rng.normal(scale=scale, size=3)))
    return bs.SplineSO3(grid, np.stack(nodes))


def test_so3_angular_velocity_matches_log_difference(rng):
    h = 1e-6
    for order in (4, 5, 6, 7):
        spline = random_so3_spline(rng, order)
        lo, hi = spline.grid.domain
        for t in rng.uniform(lo + 2 * h, hi - 2 * h, size=15):
            w = spline.angular_velocity(t)
            fd = so3_log(
                spline.sample(t - h).T @ spline.sample(t + h), validate=False
            ) / (2 * h)
            assert np.linalg.norm(w - fd) < 1e-5


def test_so3_order2_is_slerp(rng):
    """Order 2 reduces to piecewise geodesic interpolation of the nodes."""
    grid = bs.KnotGrid(t0=0.0, dt=1.0, count=5, order=2)
    nodes = np.stack([random_rotation(rng) for _ in range(5)])
    spline = bs.SplineSO3(grid, nodes)
    for i in range(4):
        assert np.allclose(spline.sample(float(i)), nodes[i], atol=1e-12)
        mid = spline.sample(i + 0.5)
        d = so3_log(nodes[i].T @ nodes[i + 1], validate=False)
        assert np.allclose(mid, nodes[i] @ so3_exp(0.5 * d), atol=1e-12)


def test_partition_of_unity():
    for order in range(2, 9):
        M = bs.basis_matrix(order)
        u = np.linspace(0, 0.999, 7)
        pows = u[:, None] ** np.arange(order)
        total = (pows @ M.T).sum(axis=1)
        assert np.allclose(total, 1.0, atol=1e-12)


def test_window_node_coefficients_consistency(rng):
    for order in (3, 4, 6):
        window = rng.normal(size=(order, 3))
        for d in (0, 1, 2):
            u = np.array([0.37])
            c = bs.window_node_coefficients(order, u, d)
            direct = bs.r3_window_eval(window, u, order, 1.0, d)
            assert np.allclose(c[0] @ window, direct[0], atol=1e-12)


def test_grid_domain_and_errors():
    grid = bs.KnotGrid(t0=1.0, dt=0.5, count=10, order=4)
    lo, hi = grid.domain
    assert lo == 1.0 and np.isclose(hi, 1.0 + 7 * 0.5)
    i, u = grid.normalized_time(1.0)
    assert i == 0 and u == 0.0
    with pytest.raises(OutOfDomainError):
        grid.normalized_time(hi)
    with pytest.raises(OutOfDomainError):
        grid.normalized_time(lo - 1e-9)
    with pytest.raises(OutOfDomainError):
        grid.normalized_times(np.array([lo, hi + 1.0]))
    with pytest.raises(InvalidArgumentError):
        bs.KnotGrid(t0=0.0, dt=-1.0, count=10, order=4)
    with pytest.raises(InvalidArgumentError):
        bs.KnotGrid(t0=0.0, dt=1.0, count=3, order=4)
    with pytest.raises(InvalidArgumentError):
        bs.KnotGrid(t0=0.0, dt=1.0, count=10, order=9)


def test_normalized_times_matches_scalar(rng):
    grid = bs.KnotGrid(t0=-2.0, dt=0.3, count=20, order=5)
    lo, hi = grid.domain
    ts = rng.uniform(lo, hi - 1e-12, size=50)
    iv, uv = grid.normalized_times(ts)
    for t, i, u in zip(ts, iv, uv):
        si, su = grid.normalized_time(t)
        assert si == i and np.isclose(su, u, atol=1e-12)


def test_grid_covering():
    grid = bs.grid_covering(0.0, 10.0, 0.5, 4)
    lo, hi = grid.domain
    assert lo <= 0.0 and hi > 10.0
    assert grid.num_segments == grid.count - grid.order + 1


def test_contains():
    grid = bs.KnotGrid(t0=0.0, dt=1.0, count=8, order=4)
    assert list(grid.contains(np.array([-0.1, 0.0, 4.9, 5.0]))) == [
        False, True, True, False,
    ]


def test_serialization_roundtrip(rng, tmp_path):
    r3 = random_spline(rng, 5, count=9, t0=0.0, dt=0.25)
    so3 = random_so3_spline(rng, 5, count=9)
    grid = so3.grid
    r3 = bs.SplineR3(grid, rng.normal(size=(grid.count, 3)))
    path = tmp_path / "spline.json"
    bs.save_spline_pair(path, r3, so3)
    with open(path) as f:
        data = json.load(f)
    assert set(data) == {"order", "t0_ns", "dt_ns", "positions", "rotations"}
    pos2, rot2 = bs.load_spline_pair(path)
    lo, hi = grid.domain
    ts = rng.uniform(lo, hi - 1e-9, size=20)
    assert np.max(np.abs(pos2.sample_many(ts) - r3.sample_many(ts))) < 1e-9
    assert np.max(np.abs(rot2.sample_many(ts) - so3.sample_many(ts))) < 1e-9


def test_spline_validation():
    grid = bs.KnotGrid(t0=0.0, dt=1.0, count=6, order=4)
    with pytest.raises(InvalidArgumentError):
        bs.SplineR3(grid, np.zeros((5, 3)))
    with pytest.raises(InvalidArgumentError):
        bs.SplineR3(grid, np.full((6, 3), np.nan))
    with pytest.raises(InvalidArgumentError):
        bs.SplineSO3(grid, np.zeros((6, 3, 3)))


def test_angular_velocity_needs_order3():
    grid = bs.KnotGrid(t0=0.0, dt=1.0, count=6, order=2)
    spline = bs.SplineSO3(grid, np.stack([np.eye(3)] * 6))
    with pytest.raises(InvalidArgumentError):
        spline.angular_velocity(0.5)
