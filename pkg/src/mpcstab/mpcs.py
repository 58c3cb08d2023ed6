"""MPC with stability guarantee (MPCS).

At each step ``alpha(k) = m(x(k))`` is computed and the horizon problem is
solved with the extra constraint ``l(x(k+2|k), u(k+1|k)) <= alpha(k) - delta``.
For ``N = 1`` the second control ``u(k+1|k)`` is an extra decision variable
that appears only in that constraint. Feasibility of every step implies
``alpha`` is nonincreasing along the closed loop.

The recursive-feasibility variant replaces the extra constraint by
membership of the first predicted state in a gridded control-invariant
subset of ``{x : m(x) <= alpha(k)}``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import QuadraticCost, StageCost
from .dynamics import TAU_SET, Constraints, LinearModel, SystemModel
from .errors import ArgumentError, BudgetError, ConfigError, UnsupportedError
from .sim import ClosedLoopTrace, ControlAction, simulate
from .solver import (INFEASIBLE, OPTIMAL, ExtraConstraint, HorizonSolution,
                     one_step_batch, one_step_gradient, one_step_value, solve_horizon)
from .stability import TAU_CERT

SECOND_STAGE = "second-stage-constraint"
INVARIANT_SET = "invariant-set"


@dataclass(frozen=True)
class StateGrid:
    """Cell grid over a state box and sampled controls.

    ``cells`` per state axis (odd counts on a symmetric box put a cell
    centre exactly at the origin) and ``controls`` samples per input axis.
    ``u_bound`` replaces infinite input bounds for sampling.
    """

    lower: tuple
    upper: tuple
    cells: int = 201
    controls: int = 401
    u_bound: Optional[float] = None
    max_edges: int = 40_000_000

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or any(a >= 0 or b <= 0 for a, b in zip(lo, hi)):
            raise ConfigError("grid box must contain the origin in its interior")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self):
        return len(self.lower)


@dataclass(frozen=True)
class MpcsConfig:
    N: int = 1
    delta: float = 0.0
    rf_mode: str = SECOND_STAGE
    grid: Optional[StateGrid] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"horizon must be an integer >= 1, got {self.N}")
        if not self.delta >= 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if self.rf_mode not in (SECOND_STAGE, INVARIANT_SET):
            raise ConfigError(f"unknown rf_mode {self.rf_mode!r}")
        if self.rf_mode == INVARIANT_SET and self.grid is None:
            raise ConfigError("invariant-set mode needs a state grid")


@dataclass
class MpcsStepRecord:
    k: int
    alpha: float
    sol: Optional[HorizonSolution]
    applied_u: Optional[np.ndarray]
    constraint_lhs: float
    bound: float = np.nan
    status: str = OPTIMAL

    @property
    def feasible(self):
        return self.status == OPTIMAL


class SecondStageBound(ExtraConstraint):
    """``l(x(k+2|k), u(k+1|k)) <= bound``; appends one step when ``N = 1``."""

    def __init__(self, l: StageCost, bound: float, N: int):
        self.l = l
        self.bound = float(bound)
        self.steps = 1 if N == 1 else 0

    def evaluate(self, X, U):
        T, n = X.shape
        m = U.shape[1]
        jX = np.zeros((1, T, n))
        jU = np.zeros((1, T, m))
        x2, u1 = X[1], U[1]
        if isinstance(self.l, QuadraticCost):
            Qx, Ru = self.l.Q @ x2, self.l.R @ u1
            g = float(x2 @ Qx + u1 @ Ru) - self.bound
            jX[0, 1], jU[0, 1] = 2 * Qx, 2 * Ru
        else:
            g = self.l.value(x2, u1) - self.bound
            jX[0, 1], jU[0, 1] = self.l.grad(x2, u1)
        return np.array([g]), jX, jU


class SublevelBound(ExtraConstraint):
    """``m(x(k+1|k)) <= bound`` with the envelope-theorem gradient of ``m``."""

    steps = 0

    def __init__(self, model, l, sets, bound: float):
        self.model, self.l, self.sets = model, l, sets
        self.bound = float(bound)

    def evaluate(self, X, U):
        T, n = X.shape
        jX = np.zeros((1, T, n))
        jU = np.zeros((1, T, U.shape[1]))
        osv = one_step_value(self.model, self.l, self.sets, X[0])
        if not osv.feasible:
            # push back towards the origin, where m is always defined
            return np.array([1.0 + float(X[0] @ X[0])]), jX + _unit(jX, 0, 2 * X[0]), jU
        jX[0, 0] = one_step_gradient(self.model, self.l, self.sets, X[0], osv)
        return np.array([osv.m_val - self.bound]), jX, jU


def _unit(arr, t, v):
    out = np.zeros_like(arr)
    out[0, t] = v
    return out


def _bounds(alpha, delta):
    """Right-hand sides to try, in order, for the second-stage constraint.

    ``alpha - delta`` while ``alpha >= delta``. Below that a fixed decrease
    is impossible (``l >= 0``) and a zero bound leaves no interior, so the
    decrease shrinks to ``alpha / 2`` with the non-strict ``alpha`` kept as
    fallback.
    """
    if delta <= 0:
        return (alpha,)
    if alpha >= delta:
        return (alpha - delta,)
    return (0.5 * alpha, alpha)


def mpcs_step(model: SystemModel, l: StageCost, sets: Constraints, cfg: MpcsConfig,
              x, k: int = 0) -> MpcsStepRecord:
    """Steps 2-3 of MPCS at state ``x``; the applied control is ``u*(k|k)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    osv = one_step_value(model, l, sets, x)
    if not osv.feasible:
        return MpcsStepRecord(k, np.inf, None, None, np.nan, status=INFEASIBLE)
    alpha = osv.m_val
    for bound in _bounds(alpha, cfg.delta):
        sol = solve_horizon(model, l, sets, x, cfg.N, extra=SecondStageBound(l, bound, cfg.N))
        if sol.status != INFEASIBLE:
            break
    if cfg.N == 1:
        x2, u1 = sol.X_extra[0], sol.U_extra[0]
    else:
        x2, u1 = sol.X[1], sol.U[1]
    lhs = l.value(x2, u1)
    return MpcsStepRecord(k, alpha, sol, sol.U[0].copy(), lhs, bound, sol.status)


def mpcs_step_nested(model: SystemModel, l: StageCost, sets: Constraints, cfg: MpcsConfig,
                     x, k: int = 0) -> MpcsStepRecord:
    """``N = 1`` MPCS through the reduction ``m(x(k+1|k)) <= alpha(k)``.

    Every constraint evaluation solves a one-step problem, so this is kept
    as a cross-check of :func:`mpcs_step`.
    """
    if cfg.N != 1:
        raise ArgumentError("the nested reduction applies to N = 1 only")
    x = np.asarray(x, dtype=float).reshape(-1)
    osv = one_step_value(model, l, sets, x)
    if not osv.feasible:
        return MpcsStepRecord(k, np.inf, None, None, np.nan, status=INFEASIBLE)
    alpha = osv.m_val
    for bound in _bounds(alpha, cfg.delta):
        sol = solve_horizon(model, l, sets, x, 1, extra=SublevelBound(model, l, sets, bound))
        if sol.status != INFEASIBLE:
            break
    lhs = one_step_value(model, l, sets, sol.X[0]).m_val
    return MpcsStepRecord(k, alpha, sol, sol.U[0].copy(), lhs, bound, sol.status)


class MPCSController:
    """Closed-loop adapter for :func:`simulate`."""

    label = "mpcs"

    def __init__(self, model, l, sets, cfg: MpcsConfig, fs: Optional["FeasibleSet"] = None):
        self.model, self.l, self.sets, self.cfg, self.fs = model, l, sets, cfg, fs
        if cfg.rf_mode == INVARIANT_SET and fs is None:
            raise ConfigError("invariant-set mode needs a feasible set")

    def __call__(self, x, k):
        if self.cfg.rf_mode == INVARIANT_SET:
            rec = mpcs_step_rf(self.model, self.l, self.sets, self.cfg, x, self.fs, k)
        else:
            rec = mpcs_step(self.model, self.l, self.sets, self.cfg, x, k)
        if not rec.feasible:
            return ControlAction(np.zeros(self.model.m), rec.status, alpha=rec.alpha, record=rec)
        return ControlAction(rec.applied_u, OPTIMAL, rec.sol.J, rec.alpha, rec.sol, rec)


def run_mpcs(model: SystemModel, l: StageCost, sets: Constraints, cfg: MpcsConfig, x0,
             steps: int, fs: Optional["FeasibleSet"] = None, monitors=()) -> ClosedLoopTrace:
    """Run MPCS in closed loop. Stops at the first infeasible step; there is
    no fallback to plain MPC because the guarantee rests on feasibility."""
    ctrl = MPCSController(model, l, sets, cfg, fs)
    return simulate(model, ctrl, x0, steps, monitors, label="mpcs")


# ---------------------------------------------------------------------------
# gridded control-invariant sets


def _control_samples(sets: Constraints, grid: StateGrid):
    ub = np.array(sets.inputs.u_bar, dtype=float)
    if np.any(np.isinf(ub)):
        if grid.u_bound is None:
            raise ConfigError("unbounded inputs need StateGrid.u_bound for sampling")
        ub = np.where(np.isinf(ub), grid.u_bound, ub)
    axes = []
    for b in ub:
        ax = np.linspace(-b, b, grid.controls)
        if grid.controls % 2 == 1:
            ax[grid.controls // 2] = 0.0
        axes.append(ax)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _one_step_many(model, l, sets, X):
    if isinstance(model, LinearModel) and isinstance(l, QuadraticCost) and model.m == 1:
        return one_step_batch(model, l, sets, X)[0]
    out = np.empty(len(X))
    for i, x in enumerate(X):
        osv = one_step_value(model, l, sets, x)
        out[i] = osv.m_val if osv.feasible else np.inf
    return out


class _Graph:
    """Successor structure shared by every level of one grid."""

    def __init__(self, model, l, sets, grid: StateGrid):
        n = model.n
        if n > 2:
            raise UnsupportedError("feasible sets are computed for n <= 2 only")
        if grid.n != n:
            raise ConfigError("grid dimension does not match the model")
        self.n = n
        self.lo = np.array(grid.lower)
        self.hi = np.array(grid.upper)
        self.cells = grid.cells
        self.h = (self.hi - self.lo) / grid.cells
        self.shape = (grid.cells,) * n
        self.size = grid.cells ** n
        axes = []
        for d in range(n):
            ax = self.lo[d] + (np.arange(grid.cells) + 0.5) * self.h[d]
            if grid.cells % 2 == 1 and np.isclose(self.lo[d], -self.hi[d]):
                ax[grid.cells // 2] = 0.0
            axes.append(ax)
        self.axes = axes
        mesh = np.meshgrid(*axes, indexing="ij")
        self.centers = np.stack([g.ravel() for g in mesh], axis=1)
        self.controls = _control_samples(sets, grid)
        n_u = len(self.controls)
        if self.size * n_u > grid.max_edges:
            raise BudgetError(f"{self.size} cells x {n_u} controls exceed {grid.max_edges} edges")
        self.m_vals = _one_step_many(model, l, sets, self.centers)
        self.admissible = np.isfinite(self.m_vals) & sets.states.contains_many(self.centers)
        self.kinds = 2 ** n
        self.sentinel = self.kinds * self.size
        edges = np.empty((self.size, n_u), dtype=np.int64)
        chunk = max(1, 2_000_000 // n_u)
        for s in range(0, self.size, chunk):
            C = self.centers[s:s + chunk]
            Xs = np.repeat(C, n_u, axis=0)
            Us = np.tile(self.controls, (len(C), 1))
            Y = model.step_many(Xs, Us)
            edges[s:s + len(C)] = self._codes(Y, sets).reshape(len(C), n_u)
        self.edges = edges

    def _codes(self, Y, sets):
        """Index into the stacked eroded-membership table for successors ``Y``.

        The successor of a cell centre must land in a box of one cell width
        whose every overlapped cell is a member; this margin absorbs the
        offset of states that are not exactly at a cell centre.
        """
        eps = 1e-9
        rel = (Y - self.lo) / self.h
        first = np.floor(rel - 0.5 + eps).astype(np.int64)
        last = np.floor(rel + 0.5 - eps).astype(np.int64)
        ok = np.all((first >= 0) & (last < self.cells), axis=1)
        ok &= sets.states.contains_many(Y)
        span = np.clip(last - first, 0, 1)
        kind = np.zeros(len(Y), dtype=np.int64)
        flat = np.zeros(len(Y), dtype=np.int64)
        for d in range(self.n):
            kind = kind * 2 + span[:, d]
            flat = flat * self.cells + np.clip(first[:, d], 0, self.cells - 1)
        return np.where(ok, kind * self.size + flat, self.sentinel)

    def eroded(self, member):
        """Stacked tables: for each span pattern, is the whole block a member?"""
        M = member.reshape(self.shape)
        out = []
        for kind in range(self.kinds):
            spans = [(kind >> (self.n - 1 - d)) & 1 for d in range(self.n)]
            E = M.copy()
            for d, s in enumerate(spans):
                if s:
                    shifted = np.zeros_like(E)
                    idx = [slice(None)] * self.n
                    src = [slice(None)] * self.n
                    idx[d] = slice(0, self.cells - 1)
                    src[d] = slice(1, self.cells)
                    shifted[tuple(idx)] = E[tuple(src)]
                    E = E & shifted
            out.append(E.ravel())
        out.append(np.zeros(1, dtype=bool))
        return np.concatenate(out)

    def sweep(self, member):
        table = self.eroded(member)
        return member & table[self.edges].any(axis=1)

    def fixpoint(self, alpha):
        member = self.admissible & (self.m_vals <= alpha + TAU_SET)
        while True:
            new = self.sweep(member)
            if np.array_equal(new, member):
                return member
            member = new

    def cell_index(self, x):
        rel = (np.asarray(x, dtype=float).reshape(-1) - self.lo) / self.h
        idx = np.floor(rel).astype(np.int64)
        # the upper face belongs to the last cell
        idx = np.where(np.isclose(rel, self.cells), self.cells - 1, idx)
        if np.any(idx < 0) or np.any(idx >= self.cells):
            return None
        flat = 0
        for d in range(self.n):
            flat = flat * self.cells + int(idx[d])
        return flat


@dataclass
class FeasibleSet:
    """Gridded control-invariant subset of ``{x : m(x) <= alpha}``.

    ``member`` is a flat boolean array over cell centres (row-major in the
    state axes). :meth:`at_level` re-solves the fixed point for another
    level on the same successor graph.
    """

    alpha: float
    member: np.ndarray
    graph: _Graph = field(repr=False)
    sets: Constraints = field(repr=False)
    model: SystemModel = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.member.sum())

    @property
    def centers(self):
        return self.graph.centers

    @property
    def sublevel(self):
        """Cells of the plain sublevel set ``{m <= alpha}``."""
        g = self.graph
        return g.admissible & (g.m_vals <= self.alpha + TAU_SET)

    def at_level(self, alpha: float) -> "FeasibleSet":
        if alpha == self.alpha:
            return self
        return FeasibleSet(float(alpha), self.graph.fixpoint(alpha), self.graph, self.sets, self.model)

    def sweep(self) -> np.ndarray:
        """One removal pass; an invariant set is returned unchanged."""
        return self.graph.sweep(self.member)

    def contains(self, x) -> bool:
        """Whether the cell holding ``x`` is a member."""
        i = self.graph.cell_index(x)
        return bool(i is not None and self.member[i] and self.sets.states.contains(x))

    def accepts(self, Y) -> np.ndarray:
        """Successor test with the one-cell margin used in the fixed point."""
        Y = np.asarray(Y, dtype=float).reshape(-1, self.graph.n)
        table = self.graph.eroded(self.member)
        return table[self.graph._codes(Y, self.sets)]

    def member_centers(self):
        return self.graph.centers[self.member]

    def to_csv(self, path):
        """Write cell-centre coordinates and membership, one row per cell."""
        n = self.graph.n
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(n)] + ["member"])
            for c, mem in zip(self.graph.centers, self.member):
                w.writerow([f"{v:.10g}" for v in c] + [int(mem)])


def compute_feasible_set(model: SystemModel, l: StageCost, sets: Constraints, alpha: float,
                         grid: StateGrid) -> FeasibleSet:
    """Largest gridded control-invariant subset of the sublevel set.

    Start from every cell centre with ``m <= alpha`` and repeatedly drop
    cells none of whose sampled controls keep the successor inside.
    """
    if alpha < 0:
        raise ArgumentError("alpha must be nonnegative")
    sets.check(model)
    g = _Graph(model, l, sets, grid)
    return FeasibleSet(float(alpha), g.fixpoint(alpha), g, sets, model)


def _sublevel_lq1(model: LinearModel, l: QuadraticCost, sets: Constraints, x, alpha):
    """Exact ``min l(f(x,u),u)`` subject to ``m(f(x,u)) <= alpha`` for one input.

    ``m`` is convex, so the admissible controls form an interval and the
    optimum is the point of that interval nearest the unconstrained
    minimiser. Returns ``None`` when the interval is empty.
    """
    b = model.B[:, 0]
    Ax = model.A @ x
    Q, r = l.Q, l.R[0, 0]
    lo, hi = sets.inputs.lower[0], sets.inputs.upper[0]

    def phi(u):
        y = Ax + b * u
        return float(y @ Q @ y + r * u * u)

    def g(U):
        U = np.atleast_1d(np.asarray(U, dtype=float))
        Y = Ax[None, :] + np.outer(U, b)
        mv = one_step_batch(model, l, sets, Y)[0]
        ok = sets.states.contains_many(Y)
        return np.where(ok, mv - alpha, np.inf)

    den = float(b @ Q @ b + r)
    u_phi = float(np.clip(-(b @ Q @ Ax) / den if den > 0 else 0.0, lo, hi))
    if g(u_phi)[0] <= 0:
        return u_phi
    # bracket the minimiser of the convex constraint function
    span = max(1.0, 2 * abs(u_phi))
    for _ in range(60):
        a_, b_ = max(lo, -span), min(hi, span)
        U = np.linspace(a_, b_, 401)
        G = g(U)
        i = int(np.argmin(G))
        at_edge = (i == 0 and a_ > lo) or (i == len(U) - 1 and b_ < hi)
        if not at_edge:
            break
        span *= 4
    feas = np.flatnonzero(G <= 0)
    if feas.size:
        u_feas = U[feas[np.argmin(np.abs(U[feas] - u_phi))]]
    else:
        # the feasible interval may be narrower than the sampling step
        h = U[1] - U[0]
        left, right = max(a_, U[i] - h), min(b_, U[i] + h)
        gr = 0.5 * (np.sqrt(5.0) - 1)
        for _ in range(80):
            c1 = right - gr * (right - left)
            c2 = left + gr * (right - left)
            if g(c1)[0] <= g(c2)[0]:
                right = c2
            else:
                left = c1
        u_feas = 0.5 * (left + right)
        if not g(u_feas)[0] <= 0:
            return None
    # sectioning toward the objective minimiser keeps the feasible end
    inner, outer = u_feas, u_phi
    for _ in range(40):
        T = np.linspace(inner, outer, 33)
        ok = g(T) <= 0
        j = int(np.argmin(ok)) - 1  # last feasible point before the first infeasible
        new_inner, new_outer = T[j], T[j + 1]
        if new_inner == inner and new_outer == outer:
            break
        inner, outer = new_inner, new_outer
    return float(inner)


def _rf_continuous(model, l, sets, cfg, x, alpha):
    if cfg.N == 1 and _is_lq1(model, l):
        u = _sublevel_lq1(model, l, sets, x, alpha)
        if u is None:
            return HorizonSolution(U=np.zeros((1, 1)), X=x[None, :].copy(), J=np.inf,
                                   status=INFEASIBLE, x0=x)
        y = model.step(x, [u])
        return HorizonSolution(U=np.array([[u]]), X=y[None, :], J=l.value(y, [u]),
                               status=OPTIMAL, x0=x)
    return solve_horizon(model, l, sets, x, cfg.N, extra=SublevelBound(model, l, sets, alpha))


def _is_lq1(model, l):
    return isinstance(model, LinearModel) and isinstance(l, QuadraticCost) and model.m == 1


def mpcs_step_rf(model: SystemModel, l: StageCost, sets: Constraints, cfg: MpcsConfig, x,
                 fs: FeasibleSet, k: int = 0) -> MpcsStepRecord:
    """MPCS step with ``x(k+1|k)`` constrained into the feasible set ``fs``.

    ``fs`` is held at the level it was computed for; ``alpha(k) = m(x(k))``
    is still recorded and, lowered by ``delta`` as in :func:`mpcs_step`,
    bounds ``m(x(k+1|k))`` in the continuous solve. That solution is kept
    when its first predicted state falls in a member cell. Otherwise the
    first control is picked among the sampled controls whose successor
    stays in the set, ranked by (dilated-box acceptance, ``m(y) <= alpha(k)``,
    distance to the continuous optimum), and the rest of the horizon is
    re-optimised.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    osv = one_step_value(model, l, sets, x)
    if not osv.feasible:
        return MpcsStepRecord(k, np.inf, None, None, np.nan, status=INFEASIBLE)
    alpha = osv.m_val
    for bound in _bounds(alpha, cfg.delta):
        sol = _rf_continuous(model, l, sets, cfg, x, bound)
        if sol.optimal and fs.contains(sol.X[0]):
            lhs = one_step_value(model, l, sets, sol.X[0]).m_val
            return MpcsStepRecord(k, alpha, sol, sol.U[0].copy(), lhs, bound)

    controls = fs.graph.controls
    Y = model.step_many(np.repeat(x[None, :], len(controls), axis=0), controls)
    inside = _contains_many(fs, Y)
    if not inside.any():
        return MpcsStepRecord(k, alpha, None, None, np.nan, alpha, INFEASIBLE)
    cand = np.flatnonzero(inside)
    robust = fs.accepts(Y[cand])
    below = _one_step_many(model, l, sets, Y[cand]) <= alpha + TAU_CERT
    target = sol.U[0] if np.all(np.isfinite(sol.U[0])) else np.zeros(model.m)
    dist = np.linalg.norm(controls[cand] - target, axis=1)
    order = cand[np.lexsort((dist, ~below, ~robust))]
    best = None
    for i in order[:5]:
        u0, y = controls[i], Y[i]
        first = l.value(y, u0)
        if cfg.N == 1:
            U, X, J = u0[None, :], y[None, :], first
        else:
            tail = solve_horizon(model, l, sets, y, cfg.N - 1)
            if not tail.optimal:
                continue
            U = np.vstack([u0[None, :], tail.U])
            X = np.vstack([y[None, :], tail.X])
            J = first + tail.J
        best = HorizonSolution(U=U, X=X, J=float(J), status=OPTIMAL, x0=x)
        break
    if best is None:
        return MpcsStepRecord(k, alpha, None, None, np.nan, alpha, INFEASIBLE)
    lhs = one_step_value(model, l, sets, best.X[0]).m_val
    return MpcsStepRecord(k, alpha, best, best.U[0].copy(), lhs, alpha)


def _contains_many(fs: FeasibleSet, Y):
    g = fs.graph
    rel = (Y - g.lo) / g.h
    idx = np.floor(rel).astype(np.int64)
    idx = np.where(np.isclose(rel, g.cells), g.cells - 1, idx)
    ok = np.all((idx >= 0) & (idx < g.cells), axis=1) & fs.sets.states.contains_many(Y)
    flat = np.zeros(len(Y), dtype=np.int64)
    for d in range(g.n):
        flat = flat * g.cells + np.clip(idx[:, d], 0, g.cells - 1)
    return ok & fs.member[flat]
