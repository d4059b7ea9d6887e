"""Levenberg-Marquardt least squares over heterogeneous parameter blocks.

Parameter blocks are either euclidean vectors or rotations; rotation blocks
are updated on the manifold with the right retraction ``R <- R @ Exp(delta)``.
Residuals are supplied by *factor groups*: vectorized batches of identically
shaped factors.  Each group gathers its per-factor block values into dense
arrays, evaluates all residuals at once, and produces per-slot Jacobians
either analytically or by central differences on the gathered values.

The normal equations are assembled sparsely from group triplets and solved
with a sparse LU factorization (dense Cholesky below 2000 unknowns).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NumericalFailureError
from .rotations import so3_exp

EUCLIDEAN = "euclidean"
ROTATION = "rotation"

CONVERGED = "converged"
MAX_ITER = "max_iter"
STALLED = "stalled"

_DENSE_LIMIT = 2000


@dataclass
class State:
    """Snapshot of all block values; immutable by convention during evaluation."""

    euc: np.ndarray  # flat storage of all euclidean blocks
    rot: np.ndarray  # (n_rot, 3, 3) storage of all rotation blocks

    def copy(self):
        return State(self.euc.copy(), self.rot.copy())


@dataclass
class _BlockMeta:
    name: str
    kind: str
    dim: int  # tangent dimension (3 for rotations)
    store: int  # offset into euc, or index into rot
    fixed: bool
    bounds: tuple | None
    col: int = -1  # tangent column offset, -1 if fixed


class Slot:
    """One parameter slot of a factor group.

    ``block_ids`` maps each factor to the block filling this slot (a scalar
    means the block is shared by all factors in the group).
    """

    def __init__(self, block_ids, kind, dim):
        self.block_ids = np.atleast_1d(np.asarray(block_ids, dtype=int))
        self.kind = kind
        self.dim = dim


class FactorGroup:
    """Base class for vectorized residual families.

    Subclasses implement :meth:`build` (slots plus any cached context) and
    :meth:`kernel` (whitened residuals from gathered slot values).  Jacobians
    default to central finite differences in the tangent space of each slot;
    override :meth:`analytic_jacobians` to supply exact ones for some slots.
    """

    name = "group"
    dim = 1  # residual dimension per factor
    fd_step = 1e-6

    def build(self, problem, state):
        """Return (ctx, [Slot, ...]) at the current state."""
        raise NotImplementedError

    def kernel(self, ctx, gathered):
        """Whitened residuals (num, dim) from gathered slot values."""
        raise NotImplementedError

    def analytic_jacobians(self, ctx, gathered):
        """dict slot_index -> (num, dim, tdim); remaining slots use FD."""
        return {}

    # -- shared machinery ---------------------------------------------------

    def residuals(self, problem, state):
        ctx, slots = self.build(problem, state)
        gathered = [problem.gather(state, s) for s in slots]
        return self.kernel(ctx, gathered)

    def linearize(self, problem, state):
        """Residuals plus per-slot Jacobians at the current state."""
        ctx, slots = self.build(problem, state)
        gathered = [problem.gather(state, s) for s in slots]
        r = self.kernel(ctx, gathered)
        num = r.shape[0]
        jacs = self.analytic_jacobians(ctx, gathered)
        for si, slot in enumerate(slots):
            if si in jacs:
                continue
            jacs[si] = self._fd_slot(ctx, gathered, si, slot, num)
        return r, slots, jacs

    def _fd_slot(self, ctx, gathered, si, slot, num):
        h = self.fd_step
        J = np.empty((num, self.dim, slot.dim))
        base = gathered[si]
        for a in range(slot.dim):
            if slot.kind == ROTATION:
                step = np.zeros(3)
                step[a] = h
                dR = so3_exp(step)
                plus = base @ dR
                minus = base @ dR.T
            else:
                plus = base.copy()
                plus[..., a] += h
                minus = base.copy()
                minus[..., a] -= h
            g_plus = list(gathered)
            g_plus[si] = plus
            g_minus = list(gathered)
            g_minus[si] = minus
            J[:, :, a] = (self.kernel(ctx, g_plus) - self.kernel(ctx, g_minus)) / (2 * h)
        return J


class Factor(FactorGroup):
    """Convenience wrapper: a single residual over named blocks.

    ``fn(*values)`` returns the raw residual; ``sqrt_info`` (optional)
    whitens it.  Jacobians are finite differences unless ``jac_fn`` returns
    a list of per-block ``(dim, tdim)`` matrices.
    """

    def __init__(self, block_names, fn, dim, sqrt_info=None, jac_fn=None, name="factor"):
        self.block_names = list(block_names)
        self.fn = fn
        self.dim = dim
        self.sqrt_info = None if sqrt_info is None else np.asarray(sqrt_info, float)
        self.jac_fn = jac_fn
        self.name = name

    def build(self, problem, state):
        slots = []
        for bn in self.block_names:
            bid = problem.block_id(bn)
            meta = problem.blocks[bid]
            slots.append(Slot(np.array([bid]), meta.kind, meta.dim))
        return None, slots

    def kernel(self, ctx, gathered):
        values = [g[0] for g in gathered]
        r = np.asarray(self.fn(*values), dtype=float).reshape(self.dim)
        if self.sqrt_info is not None:
            r = self.sqrt_info @ r
        return r[None, :]

    def analytic_jacobians(self, ctx, gathered):
        if self.jac_fn is None:
            return {}
        values = [g[0] for g in gathered]
        jacs = self.jac_fn(*values)
        out = {}
        for si, J in enumerate(jacs):
            if J is None:
                continue
            J = np.asarray(J, dtype=float)
            if self.sqrt_info is not None:
                J = self.sqrt_info @ J
            out[si] = J[None, :, :]
        return out


class Problem:
    """Ordered parameter blocks plus factor groups."""

    def __init__(self):
        self.blocks: list[_BlockMeta] = []
        self._by_name: dict[str, int] = {}
        self.groups: list[FactorGroup] = []
        self._euc_size = 0
        self._rot_count = 0
        self._euc_init: list[np.ndarray] = []
        self._rot_init: list[np.ndarray] = []
        self._layout_dirty = True
        self.num_cols = 0

    # -- blocks -------------------------------------------------------------

    def add_euclidean(self, name, value, fixed=False, bounds=None):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if not np.all(np.isfinite(value)):
            raise InvalidArgumentError(f"non-finite initial value for block {name}")
        meta = _BlockMeta(name, EUCLIDEAN, value.size, self._euc_size, fixed, bounds)
        self._euc_size += value.size
        self._euc_init.append(value)
        return self._register(meta)

    def add_rotation(self, name, value, fixed=False):
        value = np.asarray(value, dtype=float)
        if value.shape != (3, 3):
            raise InvalidArgumentError("rotation block must be a 3x3 matrix")
        meta = _BlockMeta(name, ROTATION, 3, self._rot_count, fixed, None)
        self._rot_count += 1
        self._rot_init.append(value)
        return self._register(meta)

    def _register(self, meta):
        if meta.name in self._by_name:
            raise InvalidArgumentError(f"duplicate block name {meta.name}")
        bid = len(self.blocks)
        self.blocks.append(meta)
        self._by_name[meta.name] = bid
        self._layout_dirty = True
        return bid

    def block_id(self, name):
        return self._by_name[name]

    def add_group(self, group):
        self.groups.append(group)

    def add_factor(self, factor):
        self.groups.append(factor)

    # -- state access -------------------------------------------------------

    def initial_state(self):
        euc = (
            np.concatenate(self._euc_init) if self._euc_init else np.zeros(0)
        )
        rot = (
            np.stack(self._rot_init) if self._rot_init else np.zeros((0, 3, 3))
        )
        return State(euc, rot)

    def block_value(self, state, block):
        meta = self.blocks[block] if isinstance(block, (int, np.integer)) else (
            self.blocks[self._by_name[block]]
        )
        if meta.kind == ROTATION:
            return state.rot[meta.store]
        return state.euc[meta.store : meta.store + meta.dim]

    def gather(self, state, slot: Slot):
        """Per-factor values for a slot: (num, dim) or (num, 3, 3)."""
        ids = slot.block_ids
        if slot.kind == ROTATION:
            stores = self._store_array[ids]
            return state.rot[stores]
        offs = self._store_array[ids]
        cols = offs[:, None] + np.arange(slot.dim)
        return state.euc[cols]

    # -- layout -------------------------------------------------------------

    def _layout(self):
        if not self._layout_dirty:
            return
        col = 0
        for meta in self.blocks:
            if meta.fixed:
                meta.col = -1
            else:
                meta.col = col
                col += meta.dim
        self.num_cols = col
        self._store_array = np.array([m.store for m in self.blocks], dtype=int)
        self._col_array = np.array([m.col for m in self.blocks], dtype=int)
        self._layout_dirty = False

    @property
    def free_cols(self):
        self._layout()
        return self.num_cols

    def retract(self, state, delta):
        """Apply a tangent step; clamps bounded euclidean blocks."""
        self._layout()
        new = state.copy()
        for meta in self.blocks:
            if meta.col < 0:
                continue
            d = delta[meta.col : meta.col + meta.dim]
            if meta.kind == ROTATION:
                new.rot[meta.store] = new.rot[meta.store] @ so3_exp(d)
            else:
                seg = slice(meta.store, meta.store + meta.dim)
                new.euc[seg] = new.euc[seg] + d
                if meta.bounds is not None:
                    new.euc[seg] = np.clip(new.euc[seg], meta.bounds[0], meta.bounds[1])
        return new

    # -- evaluation ---------------------------------------------------------

    def residual_vector(self, state):
        self._layout()
        parts = [g.residuals(self, state).ravel() for g in self.groups]
        return np.concatenate(parts) if parts else np.zeros(0)

    def linearize(self, state):
        """Full residual vector and sparse Jacobian over free tangent columns."""
        self._layout()
        res_parts = []
        rows_l, cols_l, vals_l = [], [], []
        row0 = 0
        for group in self.groups:
            r, slots, jacs = group.linearize(self, state)
            num, dim = r.shape
            res_parts.append(r.ravel())
            local_rows = row0 + np.arange(num * dim).reshape(num, dim)
            for si, slot in enumerate(slots):
                J = jacs[si]
                ids = slot.block_ids
                if ids.size == 1 and num > 1:
                    ids = np.broadcast_to(ids, (num,))
                bcols = self._col_array[ids]
                free = bcols >= 0
                if not np.any(free):
                    continue
                cshape = bcols[:, None, None] + np.arange(slot.dim)[None, None, :]
                cmat = np.broadcast_to(cshape, (num, dim, slot.dim))
                rmat = np.broadcast_to(local_rows[:, :, None], (num, dim, slot.dim))
                mask = np.broadcast_to(free[:, None, None], (num, dim, slot.dim))
                rows_l.append(rmat[mask])
                cols_l.append(cmat[mask])
                vals_l.append(J[mask])
            row0 += num * dim
        r_all = np.concatenate(res_parts) if res_parts else np.zeros(0)
        if rows_l:
            J_all = sp.coo_matrix(
                (np.concatenate(vals_l), (np.concatenate(rows_l), np.concatenate(cols_l))),
                shape=(row0, self.num_cols),
            ).tocsr()
        else:
            J_all = sp.csr_matrix((row0, self.num_cols))
        return r_all, J_all

    def structure_pairs(self):
        """Set of (block_i, block_j) pairs that share at least one factor."""
        self._layout()
        pairs = set()
        state = self.initial_state()
        for group in self.groups:
            _, slots = group.build(self, state)
            num = max(s.block_ids.size for s in slots)
            per_factor = []
            for s in slots:
                ids = s.block_ids
                if ids.size == 1:
                    ids = np.broadcast_to(ids, (num,))
                per_factor.append(ids)
            per_factor = np.stack(per_factor, axis=1)
            for row in per_factor:
                for a in row:
                    for b in row:
                        pairs.add((int(a), int(b)))
        return pairs


@dataclass
class SolveOptions:
    max_iter: int = 50
    lm_lambda0: float = 1e-4
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_rejects: int = 40
    log_path: str | None = None
    verbose: bool = False


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    termination: str
    cost_history: list = field(default_factory=list)
    grad_norm: float = float("nan")
    lm_lambda: float = float("nan")
    rel_tol: float = float("nan")

    @property
    def converged(self):
        return self.termination == CONVERGED


def _solve_normal(H, g, n):
    if n < _DENSE_LIMIT:
        return np.linalg.solve(H.toarray(), -g)
    return spla.splu(H.tocsc()).solve(-g)


def solve(problem: Problem, opts: SolveOptions | None = None):
    """Run Levenberg-Marquardt; returns (final State, SolveReport).

    Damping is multiplicative on the scaled diagonal: divided by 10 on an
    accepted step, multiplied by 10 on a rejected one.
    """
    opts = opts or SolveOptions()
    if problem.free_cols == 0:
        raise InvalidArgumentError("problem has no free parameter blocks")
    state = problem.initial_state()
    r, J = problem.linearize(state)
    cost = float(r @ r)
    initial_cost = cost
    history = [cost]
    lam = opts.lm_lambda0
    termination = MAX_ITER
    grad_norm = float("inf")
    iterations = 0
    log_rows = []

    for it in range(1, opts.max_iter + 1):
        iterations = it
        g = J.T @ r
        grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if grad_norm < opts.abs_tol or cost == 0.0:
            termination = CONVERGED
            iterations = it - 1
            break
        H = (J.T @ J).tocsr()
        D = H.diagonal()
        D = np.clip(D, 1e-12, None)
        accepted = False
        step_norm = float("nan")
        for _ in range(opts.max_rejects):
            A = H + sp.diags(lam * D)
            try:
                delta = _solve_normal(A, g, problem.num_cols)
            except Exception:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                continue
            trial = problem.retract(state, delta)
            try:
                r_new = problem.residual_vector(trial)
            except Exception:
                lam *= 10.0
                continue
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                state = trial
                cost = cost_new
                history.append(cost)
                step_norm = float(np.linalg.norm(delta))
                lam = max(lam / 10.0, 1e-15)
                r, J = problem.linearize(state)
                accepted = True
                if rel_drop < opts.rel_tol:
                    termination = CONVERGED
                break
            lam *= 10.0
        log_rows.append((it, cost, lam, step_norm, grad_norm))
        if opts.verbose:
            print(
                f"iter {it:3d}  cost {cost:.6e}  lambda {lam:.1e}  "
                f"|g|inf {grad_norm:.2e}"
            )
        if not accepted:
            termination = CONVERGED if grad_norm < 1e-6 else STALLED
            break
        if termination == CONVERGED:
            break

    if opts.log_path:
        with open(opts.log_path, "w") as f:
            f.write("iter,cost,lambda,step_norm,grad_norm\n")
            for row in log_rows:
                f.write(",".join(f"{v}" for v in row) + "\n")

    report = SolveReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        termination=termination,
        cost_history=history,
        grad_norm=grad_norm,
        lm_lambda=lam,
        rel_tol=opts.rel_tol,
    )
    return state, report


def numeric_jacobians(factor: Factor, problem: Problem, state: State):
    """Finite-difference Jacobians of a single factor (test utility)."""
    _, slots, jacs = factor.linearize(problem, state)
    return [jacs[i][0] for i in range(len(slots))]
