import numpy as np
import pytest

from splinefusion.errors import InvalidArgumentError
from splinefusion.rotations import random_rotation, so3_exp, so3_log
from splinefusion.solver import (
    EUCLIDEAN,
    Factor,
    FactorGroup,
    Problem,
    Slot,
    SolveOptions,
    solve,
)


def test_linear_least_squares_exact():
    """A linear problem is solved to machine precision in one accepted step."""
    problem = Problem()
    problem.add_euclidean("x", np.zeros(2))
    A = np.array([[2.0, 1.0], [1.0, 3.0], [0.0, 1.0]])
    b = np.array([1.0, 2.0, 3.0])
    problem.add_factor(Factor(["x"], lambda x: A @ x - b, dim=3))
    state, report = solve(problem, SolveOptions(lm_lambda0=1e-12))
    x_ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.allclose(problem.block_value(state, "x"), x_ref, atol=1e-8)
    assert report.converged


def test_rosenbrock_converges():
    problem = Problem()
    problem.add_euclidean("x", np.array([-1.2, 1.0]))
    problem.add_factor(Factor(
        ["x"], lambda x: np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]]),
        dim=2,
    ))
    state, report = solve(problem, SolveOptions(max_iter=100, rel_tol=1e-14))
    assert np.allclose(problem.block_value(state, "x"), [1.0, 1.0], atol=1e-6)


def test_rotation_block_manifold(rng):
    target = random_rotation(rng)
    problem = Problem()
    problem.add_rotation("R", np.eye(3))
    problem.add_factor(Factor(
        ["R"], lambda R: so3_log(R.T @ target, validate=False), dim=3,
    ))
    state, report = solve(problem)
    assert np.allclose(problem.block_value(state, "R"), target, atol=1e-8)


def test_fixed_blocks_do_not_move():
    problem = Problem()
    problem.add_euclidean("a", np.array([1.0]), fixed=True)
    problem.add_euclidean("b", np.array([0.0]))
    problem.add_factor(Factor(["a", "b"], lambda a, b: a + b - 5.0, dim=1))
    state, _ = solve(problem)
    assert problem.block_value(state, "a")[0] == 1.0
    assert np.isclose(problem.block_value(state, "b")[0], 4.0, atol=1e-8)


def test_bounds_clamped():
    problem = Problem()
    problem.add_euclidean("x", np.array([0.0]), bounds=(-0.5, 0.5))
    problem.add_factor(Factor(["x"], lambda x: x - 3.0, dim=1))
    state, _ = solve(problem)
    assert problem.block_value(state, "x")[0] <= 0.5 + 1e-12


def test_no_free_blocks_raises():
    problem = Problem()
    problem.add_euclidean("x", np.zeros(1), fixed=True)
    problem.add_factor(Factor(["x"], lambda x: x, dim=1))
    with pytest.raises(InvalidArgumentError):
        solve(problem)


def test_cost_history_monotone():
    problem = Problem()
    problem.add_euclidean("x", np.array([5.0, -3.0]))
    problem.add_factor(Factor(
        ["x"], lambda x: np.array([np.sin(x[0]) + x[0], x[1] ** 3 - 1.0]),
        dim=2,
    ))
    _, report = solve(problem, SolveOptions(max_iter=60))
    h = report.cost_history
    assert all(h[i + 1] <= h[i] for i in range(len(h) - 1))
    assert report.final_cost == h[-1]
    assert report.initial_cost == h[0]


def test_analytic_jacobian_used():
    calls = {"jac": 0}

    def jac(x):
        calls["jac"] += 1
        return [np.array([[2.0 * x[0]]])]

    problem = Problem()
    problem.add_euclidean("x", np.array([3.0]))
    problem.add_factor(Factor(
        ["x"], lambda x: np.array([x[0] ** 2 - 4.0]), dim=1, jac_fn=jac,
    ))
    state, _ = solve(problem)
    assert calls["jac"] > 0
    assert np.isclose(abs(problem.block_value(state, "x")[0]), 2.0, atol=1e-8)


class _SharedGroup(FactorGroup):
    """Residuals x_i - s with a shared scalar block across all factors."""

    name = "shared"
    dim = 1

    def __init__(self, ids, shared_id, targets):
        self.ids = ids
        self.shared_id = shared_id
        self.targets = targets

    def build(self, problem, state):
        return None, [
            Slot(self.ids, EUCLIDEAN, 1),
            Slot(self.shared_id, EUCLIDEAN, 1),
        ]

    def kernel(self, ctx, gathered):
        x, s = gathered
        return x - s - self.targets[:, None]


def test_shared_slot_broadcasting():
    problem = Problem()
    ids = [problem.add_euclidean(f"x{i}", np.zeros(1)) for i in range(4)]
    shared = problem.add_euclidean("s", np.array([2.0]), fixed=True)
    targets = np.array([1.0, 2.0, 3.0, 4.0])
    problem.add_group(_SharedGroup(np.array(ids), shared, targets))
    state, _ = solve(problem)
    got = np.array([problem.block_value(state, f"x{i}")[0] for i in range(4)])
    assert np.allclose(got, targets + 2.0, atol=1e-8)


def test_fd_matches_analytic_on_group(rng):
    problem = Problem()
    ids = [problem.add_euclidean(f"x{i}", rng.normal(size=1)) for i in range(4)]
    shared = problem.add_euclidean("s", np.array([0.3]))
    group = _SharedGroup(np.array(ids), shared, rng.normal(size=4))
    problem.add_group(group)
    problem._layout()
    state = problem.initial_state()
    _, slots, jacs = group.linearize(problem, state)
    assert np.allclose(jacs[0], np.ones((4, 1, 1)), atol=1e-8)
    assert np.allclose(jacs[1], -np.ones((4, 1, 1)), atol=1e-8)


def test_solver_log(tmp_path):
    problem = Problem()
    problem.add_euclidean("x", np.array([4.0]))
    problem.add_factor(Factor(["x"], lambda x: np.array([x[0] ** 2 - 1.0]), dim=1))
    log = tmp_path / "lm.csv"
    solve(problem, SolveOptions(log_path=str(log)))
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "iter,cost,lambda,step_norm,grad_norm"
    assert len(lines) > 1


def test_duplicate_block_name():
    problem = Problem()
    problem.add_euclidean("x", np.zeros(1))
    with pytest.raises(InvalidArgumentError):
        problem.add_euclidean("x", np.zeros(1))
