"""Stage costs charged on the successor state, and terminal weights.

The original running cost ``l'(x, u) = q(x) + r(u)`` summed over
``i = 0..N`` and the shifted cost ``l(x_next, u) = q(x_next) + r(u)`` summed
over ``i = 0..N-1`` differ only by ``q(x(k))``, which no control can change,
and by the last-input term ``r(u(k+N))`` which is minimised by ``u = 0``. Both
objectives therefore have the same minimising control sequence; the shifted
one is what every solver and certificate in this package uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ShapeError

_PSD_TOL = 1e-12


def _weight(W, name):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {W.shape}")
    if not np.allclose(W, W.T, atol=1e-12, rtol=0):
        raise ConfigError(f"{name} must be symmetric")
    W = 0.5 * (W + W.T)
    if np.linalg.eigvalsh(W).min() < -_PSD_TOL * max(1.0, np.abs(W).max()):
        raise ConfigError(f"{name} must be positive semidefinite")
    W.setflags(write=False)
    return W


class StageCost:
    """Shifted stage cost ``l(x_next, u) >= 0`` with ``l(0, 0) = 0``."""

    kind = "abstract"

    def value(self, x_next, u) -> float:
        raise NotImplementedError

    def grad(self, x_next, u) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def input_cost(self, u) -> float:
        raise NotImplementedError(f"{type(self).__name__} is not separable")

    def __call__(self, x_next, u):
        return self.value(x_next, u)


@dataclass(frozen=True, eq=False)
class QuadraticCost(StageCost):
    """``l(x_next, u) = x_next' Q x_next + u' R u``."""

    Q: np.ndarray
    R: np.ndarray
    kind = "separable-quadratic"

    def __post_init__(self):
        object.__setattr__(self, "Q", _weight(self.Q, "Q"))
        object.__setattr__(self, "R", _weight(self.R, "R"))

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]

    @property
    def state_definite(self) -> bool:
        """True when ``Q`` is positive definite, which backs the class-K bounds."""
        return bool(np.linalg.eigvalsh(self.Q).min() > _PSD_TOL)

    def _check(self, x_next, u):
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if x_next.shape != (self.n,) or u.shape != (self.m,):
            raise ShapeError(
                f"expected x_next of size {self.n} and u of size {self.m}, "
                f"got {x_next.shape} and {u.shape}")
        return x_next, u

    def value(self, x_next, u):
        x_next, u = self._check(x_next, u)
        return float(x_next @ self.Q @ x_next + u @ self.R @ u)

    def values(self, X_next, U):
        """Vectorised :meth:`value` over rows of ``X_next`` and ``U``."""
        X_next = np.asarray(X_next, dtype=float).reshape(-1, self.n)
        U = np.asarray(U, dtype=float).reshape(-1, self.m)
        return np.einsum("ki,ij,kj->k", X_next, self.Q, X_next) + \
            np.einsum("ki,ij,kj->k", U, self.R, U)

    def grad(self, x_next, u):
        x_next, u = self._check(x_next, u)
        return 2.0 * self.Q @ x_next, 2.0 * self.R @ u

    def state_cost(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(x @ self.Q @ x)

    def input_cost(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        return float(u @ self.R @ u)


@dataclass(frozen=True, eq=False)
class FunctionCost(StageCost):
    """Stage cost given by a callable.

    ``grad`` returns ``(dl/dx_next, dl/du)``; central differences are used
    when it is omitted. ``input_cost`` is needed only to attach a terminal
    weight.
    """

    fn: Callable
    n: int
    m: int
    grad_fn: Optional[Callable] = None
    input_fn: Optional[Callable] = None
    kind = "evaluable"

    def value(self, x_next, u):
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if x_next.shape != (self.n,) or u.shape != (self.m,):
            raise ShapeError("stage cost arguments have the wrong size")
        return float(self.fn(x_next, u))

    def grad(self, x_next, u):
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if self.grad_fn is not None:
            gx, gu = self.grad_fn(x_next, u)
            return np.asarray(gx, dtype=float).reshape(self.n), \
                np.asarray(gu, dtype=float).reshape(self.m)
        h = 1e-6
        gx = np.empty(self.n)
        gu = np.empty(self.m)
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            gx[j] = (self.value(x_next + e, u) - self.value(x_next - e, u)) / (2 * h)
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = h
            gu[j] = (self.value(x_next, u + e) - self.value(x_next, u - e)) / (2 * h)
        return gx, gu

    def input_cost(self, u):
        if self.input_fn is None:
            return super().input_cost(u)
        return float(self.input_fn(np.asarray(u, dtype=float).reshape(-1)))


@dataclass(frozen=True, eq=False)
class TerminalWeight:
    """Terminal weight ``p(x)`` given as a matrix ``P`` or as a callable.

    The last-stage cost of a terminal-weighted problem is
    ``l_T(x_N, u_{N-1}) = p(x_N) + r(u_{N-1})``; :meth:`last_stage` builds it.
    """

    P: Optional[np.ndarray] = None
    p: Optional[Callable] = None
    p_grad: Optional[Callable] = None

    def __post_init__(self):
        if (self.P is None) == (self.p is None):
            raise ConfigError("give exactly one of P (matrix) or p (callable)")
        if self.P is not None:
            object.__setattr__(self, "P", _weight(self.P, "P"))

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.P is not None:
            return float(x @ self.P @ x)
        return float(self.p(x))

    def last_stage(self, l: StageCost) -> StageCost:
        if self.P is not None and isinstance(l, QuadraticCost):
            return QuadraticCost(self.P, l.R)
        n = self.P.shape[0] if self.P is not None else l.n
        m = l.m

        def grad(x, u):
            if self.P is not None:
                gx = 2.0 * self.P @ x
            elif self.p_grad is not None:
                gx = np.asarray(self.p_grad(x), dtype=float)
            else:
                gx = FunctionCost(lambda x_, u_: self(x_), n, m).grad(x, u)[0]
            _, gu = (l.grad(np.zeros(l.n), u) if isinstance(l, QuadraticCost)
                     else FunctionCost(lambda x_, u_: l.input_cost(u_), n, m).grad(x, u))
            return gx, gu

        return FunctionCost(lambda x, u: self(x) + l.input_cost(u), n, m,
                            grad_fn=grad, input_fn=l.input_cost)


def stage(l: StageCost, x_next, u) -> float:
    """Shifted stage cost ``l(x_next, u)``."""
    return l.value(x_next, u)


def shift_from_original(q_weight, r_weight) -> QuadraticCost:
    """Turn the running cost ``q(x) + r(u)`` into the successor-state form.

    Weights may be scalars or matrices. The shifted horizon sum differs from
    the original one by the constant ``q(x(k))`` and the final-input term,
    which is fixed at ``u(k+N) = 0``.
    """
    return QuadraticCost(np.atleast_2d(q_weight), np.atleast_2d(r_weight))


def horizon_cost(l: StageCost, X_pred, U, lT: Optional[TerminalWeight] = None) -> float:
    """Sum of stage costs along a predicted trajectory.

    ``X_pred[i]`` is the state reached after applying ``U[i]``. With a
    terminal weight the last stage is charged ``p(x_N) + r(u_{N-1})``.
    """
    X_pred = np.asarray(X_pred, dtype=float)
    U = np.asarray(U, dtype=float)
    if X_pred.ndim == 1:
        X_pred = X_pred.reshape(-1, 1)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    if len(X_pred) != len(U) or len(U) < 1:
        raise ShapeError(f"need N >= 1 states and controls, got {len(X_pred)} and {len(U)}")
    N = len(U)
    total = sum(l.value(X_pred[i], U[i]) for i in range(N - 1))
    last = lT.last_stage(l) if lT is not None else l
    return float(total + last.value(X_pred[-1], U[-1]))
