"""Finite-horizon optimal control: numeric solver, LQ closed forms and a
brute-force enumeration oracle.

The numeric path works on the condensed problem in the control sequence
``z = (u_0, ..., u_{T-1})`` only. The input box is handled by projection;
state-box and extra constraints go through an augmented Lagrangian whose
inner problems are solved by spectral projected gradient with backtracking.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost import QuadraticCost, StageCost, TerminalWeight
from .dynamics import TAU_SET, Constraints, LinearModel, SystemModel
from .errors import ArgumentError, BudgetError, ConfigError, ShapeError, SingularityError

log = logging.getLogger(__name__)

PG_TOL = 1e-8
MAX_ITER = 10_000
PENALTY_START = 10.0
PENALTY_DOUBLINGS = 6
# internal feasibility target; results are accepted up to TAU_SET
_FEAS_TARGET = 1e-11
_MAX_OUTER = 60
_STALL_FACTOR = 100.0
# smallest objective and variable scale; keeps tiny states well resolved
_SCALE_FLOOR = 1e-150


OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER_STATUS = "max-iter"


@dataclass
class HorizonSolution:
    """Optimal control sequence and predicted trajectory.

    ``X[i]`` is the state reached after applying ``U[i]`` so ``X[-1]`` is the
    terminal state ``x*(k+N|k)``. Steps appended for an extra constraint
    (the MPCS ``u(k+1|k)`` when ``N = 1``) live in ``U_extra``/``X_extra``.
    """

    U: np.ndarray
    X: np.ndarray
    J: float
    status: str
    x0: np.ndarray
    U_extra: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    X_extra: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    iterations: int = 0
    violation: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def N(self) -> int:
        return len(self.U)

    @property
    def u0(self) -> np.ndarray:
        return self.U[0]


@dataclass
class OneStepValue:
    """``m(x) = min_u l(f(x, u), u)`` subject to ``f(x, u)`` in the state set."""

    m_val: float
    u_star: np.ndarray
    x_next: np.ndarray
    status: str = OPTIMAL

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL


class ExtraConstraint:
    """Additional constraints ``g(X, U) <= 0`` on the predicted trajectory.

    ``steps`` appends that many controls beyond the horizon; they enter the
    constraints but not the objective. :meth:`evaluate` returns ``g`` of
    shape ``(k,)`` and its Jacobians ``(k, T, n)`` and ``(k, T, m)`` where
    ``T = N + steps``.
    """

    steps: int = 0

    def evaluate(self, X, U):
        raise NotImplementedError


@dataclass(frozen=True)
class GridSpec:
    """Control grid for :func:`brute_force_dp`.

    ``points`` samples per control axis over the input box (or
    ``[-u_bound, u_bound]`` on unbounded axes). When the full product grid
    exceeds ``budget`` and ``refine_levels > 0`` a coarser product grid is
    enumerated first and then repeatedly re-enumerated on a box of two cells
    around the incumbent until the cell width is below the nominal spacing
    and ``refine_levels`` zoom passes have run.
    """

    points: int = 2001
    u_bound: Optional[float] = None
    budget: int = 1_000_000
    refine_levels: int = 0


def _check_weights(l: StageCost):
    if isinstance(l, QuadraticCost):
        return  # validated on construction
    if not isinstance(l, StageCost):
        raise ConfigError("stage cost must be a StageCost")


# ---------------------------------------------------------------------------
# condensed problem


class _Condensed:
    """Maps the control sequence to predicted states and back-propagates."""

    def __init__(self, model: SystemModel, x0, T: int):
        self.model = model
        self.x0 = x0
        self.T = T
        self.n, self.m = model.n, model.m
        if isinstance(model, LinearModel):
            A, B = model.A, model.B
            n, m = self.n, self.m
            Phi = np.zeros((T * n, n))
            Gam = np.zeros((T * n, T * m))
            Ak = np.eye(n)
            powers = [np.eye(n)]
            for i in range(T):
                Ak = A @ Ak
                powers.append(Ak)
                Phi[i * n:(i + 1) * n] = Ak
            for i in range(T):
                for j in range(i + 1):
                    Gam[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B
            self.free = (Phi @ x0).reshape(T, n)
            self.Gam = Gam
        else:
            self.Gam = None
        self._jac = None

    def rollout(self, z):
        U = z.reshape(self.T, self.m)
        if self.Gam is not None:
            return self.free + (self.Gam @ z).reshape(self.T, self.n)
        X = np.empty((self.T, self.n))
        jac = []
        x = self.x0
        for i in range(self.T):
            jac.append(self.model.jacobians(x, U[i]))
            x = self.model.step(x, U[i])
            X[i] = x
        self._jac = jac
        return X

    def vjp(self, gX, gU):
        if self.Gam is not None:
            return self.Gam.T @ gX.ravel() + gU.ravel()
        out = np.array(gU, dtype=float)
        p = np.zeros(self.n)
        for i in range(self.T - 1, -1, -1):
            p = p + gX[i]
            Fx, Fu = self._jac[i]
            out[i] += Fu.T @ p
            p = Fx.T @ p
        return out.ravel()


def _stage_terms(l: StageCost, lT: Optional[StageCost], X, U, N):
    """Objective value and its gradients w.r.t. ``X`` and ``U``."""
    gX = np.zeros_like(X)
    gU = np.zeros_like(U)
    if isinstance(l, QuadraticCost) and (lT is None or isinstance(lT, QuadraticCost)):
        Xs, Us = X[:N], U[:N]
        QX = Xs @ l.Q
        RU = Us @ l.R
        if lT is not None:
            QX[-1] = Xs[-1] @ lT.Q
            RU[-1] = Us[-1] @ lT.R
        J = float((QX * Xs).sum() + (RU * Us).sum())
        gX[:N] = 2 * QX
        gU[:N] = 2 * RU
        return J, gX, gU
    J = 0.0
    for i in range(N):
        c = lT if (lT is not None and i == N - 1) else l
        J += c.value(X[i], U[i])
        gX[i], gU[i] = c.grad(X[i], U[i])
    return J, gX, gU


def _spg(fg, z, lo, hi, tol=PG_TOL, max_iter=MAX_ITER):
    """Spectral projected gradient with Armijo backtracking on a box.

    Returns ``(z, f, g, iterations, converged)``. Besides the projected
    gradient test, a point counts as converged when the objective can no
    longer be decreased at rounding level and the projected gradient is
    within ``_STALL_FACTOR * tol``.
    """
    z = np.clip(z, lo, hi)
    f, g = fg(z)
    step = 1.0
    it = 0
    recent = [f]

    def stalled(pg):
        return bool(np.abs(pg).max(initial=0.0) <= _STALL_FACTOR * tol)

    for it in range(1, max_iter + 1):
        pg = np.clip(z - g, lo, hi) - z
        if np.abs(pg).max(initial=0.0) <= tol:
            return z, f, g, it, True
        d = np.clip(z - step * g, lo, hi) - z
        gd = float(g @ d)
        if gd >= 0:
            # BB step produced no descent; fall back to the plain projection
            d = pg
            gd = float(g @ d)
        floor = 1e-15 * max(1.0, float(np.abs(z).max(initial=0.0)))
        t = 1.0
        while True:
            z_new = z + t * d
            f_new, g_new = fg(z_new)
            if f_new <= f + 1e-4 * t * gd:
                break
            t *= 0.5
            if t * float(np.abs(d).max(initial=0.0)) <= floor:
                return z, f, g, it, stalled(pg)
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 1e10
        step = min(max(step, 1e-12), 1e12)
        if np.max(np.abs(s), initial=0.0) == 0.0:
            return z, f, g, it, stalled(pg)
        z, f, g = z_new, f_new, g_new
        recent.append(f)
        if len(recent) > 10:
            recent.pop(0)
            if recent[0] - f <= 1e-12 * max(1.0, abs(f)) and stalled(pg):
                return z, f, g, it, True
    pg = np.clip(z - g, lo, hi) - z
    return z, f, g, it, bool(np.max(np.abs(pg), initial=0.0) <= tol)


def _state_box_terms(sets: Constraints, X):
    """Values of ``lower - X <= 0`` and ``X - upper <= 0`` on finite bounds."""
    ss = sets.states
    if ss.lower is None:
        return None
    return np.concatenate([(ss.lower - X).ravel(), (X - ss.upper).ravel()])


def solve_horizon(model: SystemModel, l: StageCost, sets: Constraints, x0, N: int,
                  extra: Optional[ExtraConstraint] = None,
                  terminal: Optional[TerminalWeight] = None,
                  z0=None) -> HorizonSolution:
    """Minimise ``sum_{i<N} l(x(i+1), u(i))`` over admissible controls.

    Parameters
    ----------
    model, l, sets : plant, shifted stage cost, input box and state set
    x0 : initial state, must lie in the state set
    N : horizon, ``N >= 1``
    extra : optional additional constraints, possibly with appended steps
    terminal : optional terminal weight charged on the last stage
    z0 : optional starting control sequence (default zeros, which picks the
        smallest-norm optimum when several exist)
    """
    if int(N) != N or N < 1:
        raise ArgumentError(f"horizon must be an integer >= 1, got {N}")
    N = int(N)
    sets.check(model)
    _check_weights(l)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (model.n,):
        raise ShapeError(f"x0 must have size {model.n}")
    if not sets.states.contains(x0):
        raise ArgumentError(f"x0={x0} is outside the state set")
    if N == 1 and extra is None and terminal is None and _is_lq(model, l) and model.m == 1:
        # one step, one input: the clipped minimiser is exact
        mv, u = one_step_batch(model, l, sets, x0[None, :])
        x1 = model.step(x0, u[0])
        status = OPTIMAL if np.isfinite(mv[0]) else INFEASIBLE
        return HorizonSolution(U=u.copy(), X=x1[None, :], J=float(mv[0]), status=status, x0=x0)
    E = extra.steps if extra is not None else 0
    T = N + E
    n, m = model.n, model.m
    lT = terminal.last_stage(l) if terminal is not None else None
    cond = _Condensed(model, x0, T)
    lo = np.tile(sets.inputs.lower, T)
    hi = np.tile(sets.inputs.upper, T)
    has_box = sets.states.lower is not None

    def constraint_values(X, U):
        parts = []
        if has_box:
            parts.append(_state_box_terms(sets, X))
        if extra is not None:
            g, _, _ = extra.evaluate(X, U)
            parts.append(np.asarray(g, dtype=float).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    z = np.zeros(T * m) if z0 is None else np.clip(np.asarray(z0, float).ravel(), lo, hi)
    # small problems are rescaled so multiplier updates keep their resolution
    X_init, U_init = cond.rollout(z), z.reshape(T, m)
    g_init = constraint_values(X_init, U_init)
    J_init = _stage_terms(l, lT, X_init, U_init, N)[0]
    g_extra = extra.evaluate(X_init, U_init)[0] if extra is not None else np.zeros(0)
    scale = min(1.0, max(abs(J_init), float(np.max(np.abs(g_extra), initial=0.0)), _SCALE_FLOOR))

    def scaled_constraints(X, U):
        return constraint_values(X, U) / scale

    def lagrangian(z, lam, rho):
        X = cond.rollout(z)
        U = z.reshape(T, m)
        J, gX, gU = _stage_terms(l, lT, X, U, N)
        J, gX, gU = J / scale, gX / scale, gU / scale
        L = J
        off = 0
        if has_box:
            g = _state_box_terms(sets, X) / scale
            k = g.size
            s = np.maximum(0.0, g + lam[off:off + k] / rho)
            L += 0.5 * rho * float(s @ s) - float(lam[off:off + k] @ lam[off:off + k]) / (2 * rho)
            w = (rho * s / scale).reshape(2, T, n)
            gX = gX - w[0] + w[1]
            off += k
        if extra is not None:
            g, jX, jU = extra.evaluate(X, U)
            g = np.asarray(g, dtype=float).ravel() / scale
            k = g.size
            s = np.maximum(0.0, g + lam[off:off + k] / rho)
            L += 0.5 * rho * float(s @ s) - float(lam[off:off + k] @ lam[off:off + k]) / (2 * rho)
            w = rho * s / scale
            for j in range(k):
                if w[j] != 0.0:
                    gX = gX + w[j] * jX[j]
                    gU = gU + w[j] * jU[j]
        return L, cond.vjp(gX, gU)

    # controls scale with the state for f(0, 0) = 0, so small states get
    # rescaled variables and the gradient tolerance stays meaningful
    zs = min(1.0, max(float(np.max(np.abs(x0), initial=0.0)), _SCALE_FLOOR))

    def spg(lam, rho, z):
        def fg(w):
            L, g = lagrangian(zs * w, lam, rho)
            return L, zs * g
        w, _, _, it, ok = _spg(fg, z / zs, lo / zs, hi / zs)
        return np.clip(zs * w, lo, hi), it, ok

    n_con = g_init.size
    total_it = 0
    converged = False
    violation = 0.0
    if n_con == 0:
        z, total_it, converged = spg(None, 1.0, z)
    else:
        lam = np.zeros(n_con)
        rho = PENALTY_START
        doublings = 0
        prev_v = np.inf
        stall = 0
        # last stationary iterate that is feasible up to TAU_SET; later outer
        # passes can stall at rounding level without improving on it
        accepted = None
        for _ in range(_MAX_OUTER):
            z, it, converged = spg(lam, rho, z)
            total_it += it
            g = scaled_constraints(cond.rollout(z), z.reshape(T, m))
            violation = float(np.max(g, initial=0.0))
            if violation <= _FEAS_TARGET and converged:
                break
            if converged and violation * scale <= TAU_SET:
                accepted = z.copy()
            lam = np.maximum(0.0, lam + rho * g)
            if violation > 0.25 * prev_v:
                if doublings < PENALTY_DOUBLINGS:
                    rho *= 2.0
                    doublings += 1
                elif violation > 0.99 * prev_v:
                    stall += 1
                    if stall >= 5:
                        break
            prev_v = max(violation, 1e-300)
        if not converged and accepted is not None:
            z, converged = accepted, True
    X = cond.rollout(z)
    U = z.reshape(T, m)
    if n_con:
        violation = float(np.max(constraint_values(X, U), initial=0.0))
    # input box holds by projection; state box re-verified with TAU_SET
    if violation > TAU_SET:
        status = INFEASIBLE
    elif not converged:
        status = MAX_ITER_STATUS
    else:
        status = OPTIMAL
    J, _, _ = _stage_terms(l, lT, X, U, N)
    return HorizonSolution(U=U[:N].copy(), X=X[:N].copy(), J=J, status=status, x0=x0,
                           U_extra=U[N:].copy(), X_extra=X[N:].copy(),
                           iterations=total_it, violation=violation)


def condensed_objective(model, l, sets, x0, N, terminal=None):
    """Return ``(fun, grad)`` of the unconstrained condensed objective.

    Exposed for gradient checks against finite differences.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    cond = _Condensed(model, x0, N)
    lT = terminal.last_stage(l) if terminal is not None else None

    def fun(z):
        z = np.asarray(z, dtype=float)
        X = cond.rollout(z)
        return _stage_terms(l, lT, X, z.reshape(N, model.m), N)[0]

    def grad(z):
        z = np.asarray(z, dtype=float)
        X = cond.rollout(z)
        _, gX, gU = _stage_terms(l, lT, X, z.reshape(N, model.m), N)
        return cond.vjp(gX, gU)

    return fun, grad


# ---------------------------------------------------------------------------
# one-step problem


def _is_lq(model, l):
    return isinstance(model, LinearModel) and isinstance(l, QuadraticCost)


def one_step_batch(model: LinearModel, l: QuadraticCost, sets: Constraints, X):
    """Exact ``m(x)`` for many states of a single-input LQ problem.

    Returns ``(m_vals, u_star)``; infeasible states get ``m = inf``.
    """
    if not (_is_lq(model, l) and model.m == 1):
        raise ArgumentError("batch one-step evaluation needs a linear model, quadratic cost and m = 1")
    X = np.asarray(X, dtype=float).reshape(-1, model.n)
    A, B, Q, R = model.A, model.B, l.Q, l.R
    b = B[:, 0]
    AX = X @ A.T
    a = float(b @ Q @ b + R[0, 0])
    c = AX @ (Q @ b)
    lo = np.full(len(X), sets.inputs.lower[0])
    hi = np.full(len(X), sets.inputs.upper[0])
    feasible = np.ones(len(X), dtype=bool)
    ss = sets.states
    if ss.lower is not None:
        for i in range(model.n):
            bi = b[i]
            if abs(bi) > 1e-14:
                l_i = (ss.lower[i] - AX[:, i]) / bi
                u_i = (ss.upper[i] - AX[:, i]) / bi
                if bi < 0:
                    l_i, u_i = u_i, l_i
                lo = np.maximum(lo, l_i)
                hi = np.minimum(hi, u_i)
            else:
                feasible &= (AX[:, i] >= ss.lower[i] - TAU_SET) & (AX[:, i] <= ss.upper[i] + TAU_SET)
        # an interval that is empty only within tolerance collapses to a point
        near = (lo > hi) & (lo <= hi + TAU_SET)
        mid = 0.5 * (lo + hi)
        lo = np.where(near, mid, lo)
        hi = np.where(near, mid, hi)
        feasible &= lo <= hi
    if a > 0:
        u = -c / a
    else:
        u = np.zeros(len(X))
    u = np.clip(u, lo, hi)
    Xn = AX + np.outer(u, b)
    mv = np.einsum("ki,ij,kj->k", Xn, Q, Xn) + R[0, 0] * u ** 2
    mv = np.where(feasible, mv, np.inf)
    return mv, u.reshape(-1, 1)


def one_step_value(model: SystemModel, l: StageCost, sets: Constraints, x) -> OneStepValue:
    """Minimum one-step shifted stage cost from ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if _is_lq(model, l):
        if model.m == 1:
            mv, u = one_step_batch(model, l, sets, x[None, :])
            u = u[0]
            if not np.isfinite(mv[0]):
                return OneStepValue(np.inf, u, model.step(x, u), INFEASIBLE)
            return OneStepValue(float(mv[0]), u, model.step(x, u))
        if not sets.inputs.bounded and np.all(np.isinf(sets.inputs.u_bar)) \
                and sets.states.lower is None:
            K, M = lq_gain_and_value(model.A, model.B, l.Q, l.R)
            u = K @ x
            return OneStepValue(float(x @ M @ x), u, model.step(x, u))
    sol = solve_horizon(model, l, sets, x, 1)
    return OneStepValue(sol.J, sol.U[0], sol.X[0], sol.status)


def one_step_gradient(model: SystemModel, l: StageCost, sets: Constraints, x,
                      osv: Optional[OneStepValue] = None) -> np.ndarray:
    """Gradient of ``m`` at ``x`` from the envelope theorem.

    Exact where the state constraint is inactive at the one-step minimiser.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if osv is None:
        osv = one_step_value(model, l, sets, x)
    Fx, _ = model.jacobians(x, osv.u_star)
    gx, _ = l.grad(osv.x_next, osv.u_star)
    return Fx.T @ gx


# ---------------------------------------------------------------------------
# LQ closed forms


class RankDeficiencyWarning(UserWarning):
    """``R + B'QB`` is singular; a pseudoinverse was used."""


def _gain(A, B, S, R, allow_singular=True):
    H = R + B.T @ S @ B
    H = 0.5 * (H + H.T)
    rank = np.linalg.matrix_rank(H, tol=1e-12 * max(1.0, np.abs(H).max()))
    if rank < H.shape[0]:
        if not allow_singular:
            raise SingularityError(f"R + B'QB is singular (rank {rank} of {H.shape[0]})")
        warnings.warn(f"R + B'QB has rank {rank} of {H.shape[0]}; using the pseudoinverse",
                      RankDeficiencyWarning, stacklevel=3)
        K = -np.linalg.pinv(H) @ B.T @ S @ A
    else:
        K = -np.linalg.solve(H, B.T @ S @ A)
    P = A.T @ S @ A + A.T @ S @ B @ K
    return K, 0.5 * (P + P.T)


def lq_gain_and_value(A, B, Q, R, allow_singular: bool = True):
    """Unconstrained one-step gain and value matrix.

    Returns ``(K, M)`` with ``u* = K x`` and ``m(x) = x' M x`` where
    ``K = -(R + B'QB)^-1 B'QA`` and ``M = A'QA + A'QB K``. With
    ``allow_singular`` a rank-deficient ``R + B'QB`` falls back to the
    pseudoinverse (smallest-norm minimiser) and emits
    :class:`RankDeficiencyWarning`; otherwise :class:`SingularityError`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    B = B.reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return _gain(A, B, Q, R, allow_singular)


def lq_horizon_gains(A, B, Q, R, N: int):
    """Backward recursion for the shifted-cost horizon with zero terminal weight.

    Returns ``(gains, P)`` where ``gains[i]`` is the feedback applied at
    stage ``i`` and ``P[i]`` the cost-to-go matrix from stage ``i``
    (``P[N] = 0``).
    """
    if N < 1:
        raise ArgumentError("horizon must be >= 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    P = [None] * (N + 1)
    gains = [None] * N
    P[N] = np.zeros((n, n))
    for i in range(N - 1, -1, -1):
        gains[i], P[i] = _gain(A, B, Q + P[i + 1], R)
    return gains, P


def solve_lq_horizon(A, B, Q, R, x0, N: int) -> HorizonSolution:
    """Exact unconstrained solution by dynamic programming."""
    gains, P = lq_horizon_gains(A, B, Q, R, N)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    x = np.asarray(x0, dtype=float).reshape(-1)
    x_init = x.copy()
    U, X = [], []
    J = 0.0
    for i in range(N):
        u = gains[i] @ x
        x = A @ x + B @ u
        U.append(u)
        X.append(x)
        J += float(x @ Q @ x + u @ R @ u)
    return HorizonSolution(U=np.array(U), X=np.array(X), J=J, status=OPTIMAL, x0=x_init)


# ---------------------------------------------------------------------------
# brute-force oracle


def _grid_axis(lo, hi, pts):
    ax = np.linspace(lo, hi, pts)
    if lo < 0 < hi and pts % 2 == 1 and np.isclose(lo, -hi):
        ax[pts // 2] = 0.0
    return ax


def _enumerate(model, l, sets, x0, N, lows, highs, pts):
    dims = len(lows)
    axes = [_grid_axis(lows[d], highs[d], pts) for d in range(dims)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in mesh], axis=1)
    K = len(Z)
    m = model.m
    X = np.repeat(x0[None, :], K, axis=0)
    J = np.zeros(K)
    ok = np.ones(K, dtype=bool)
    for i in range(N):
        U = Z[:, i * m:(i + 1) * m]
        X = model.step_many(X, U)
        if isinstance(l, QuadraticCost):
            J += l.values(X, U)
        else:
            J += np.array([l.value(x, u) for x, u in zip(X, U)])
        ok &= sets.states.contains_many(X)
    J = np.where(ok, J, np.inf)
    return Z, J, axes


def brute_force_dp(model: SystemModel, l: StageCost, sets: Constraints, x0, N: int,
                   grid: GridSpec = GridSpec()) -> HorizonSolution:
    """Exhaustive search over gridded control sequences.

    Independent of :func:`solve_horizon`: no gradients, only forward
    simulation and comparison. Among grid optima that tie numerically the
    smallest-norm sequence wins.
    """
    if model.m > 2 or N > 4:
        raise BudgetError("brute force is limited to m <= 2 and N <= 4")
    if N < 1:
        raise ArgumentError("horizon must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    m = model.m
    dims = N * m
    ub = np.array(sets.inputs.u_bar, dtype=float)
    if np.any(np.isinf(ub)):
        if grid.u_bound is None:
            raise ArgumentError("unbounded input axis needs GridSpec.u_bound")
        ub = np.where(np.isinf(ub), grid.u_bound, ub)
    lows0 = np.tile(-ub, N)
    highs0 = np.tile(ub, N)
    pts = grid.points
    if float(pts) ** dims > grid.budget:
        if grid.refine_levels == 0:
            raise BudgetError(f"{pts}^{dims} grid points exceed the budget {grid.budget}")
        pts = int(grid.budget ** (1.0 / dims))
        pts -= 1 - pts % 2
        if pts < 5:
            raise BudgetError("budget too small for a coarse grid of 5 points per axis")
    nominal = (highs0 - lows0) / (grid.points - 1)
    lows, highs = lows0.copy(), highs0.copy()
    best_z, best_J = None, np.inf
    level = 0
    extra_levels = grid.refine_levels
    while True:
        Z, J, axes = _enumerate(model, l, sets, x0, N, lows, highs, pts)
        Jmin = J.min()
        if np.isfinite(Jmin):
            tie = np.flatnonzero(J <= Jmin + 1e-14 * max(1.0, abs(Jmin)))
            k = tie[np.argmin(np.linalg.norm(Z[tie], axis=1))]
            if J[k] <= best_J:
                best_z, best_J = Z[k].copy(), float(J[k])
        if best_z is None:
            break
        width = (highs - lows) / (pts - 1)
        if np.all(width <= nominal * (1 + 1e-12)):
            if extra_levels <= 0:
                break
            extra_levels -= 1
        level += 1
        if np.all(width < 1e-13) or level > 200:
            break
        lows = np.maximum(lows0, best_z - 2 * width)
        highs = np.minimum(highs0, best_z + 2 * width)
    if best_z is None:
        return HorizonSolution(U=np.zeros((N, m)), X=np.zeros((N, model.n)), J=np.inf,
                               status=INFEASIBLE, x0=x0)
    U = best_z.reshape(N, m)
    X = []
    x = x0
    for i in range(N):
        x = model.step(x, U[i])
        X.append(x)
    J = float(sum(l.value(X[i], U[i]) for i in range(N)))
    return HorizonSolution(U=U, X=np.array(X), J=J, status=OPTIMAL, x0=x0)
