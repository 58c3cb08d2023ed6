"""Plant models, constraint sets and single-step propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

#: Absolute per-component tolerance for set membership.
TAU_SET = 1e-9


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {M.shape}")
    return M


def _as_vector(v, n, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (n,):
        raise ShapeError(f"{name} must have shape ({n},), got {v.shape}")
    return v


class SystemModel:
    """Discrete-time plant ``x(k+1) = f(x(k), u(k))`` with ``f(0, 0) = 0``.

    Subclasses provide :meth:`step` and :meth:`jacobians`.
    """

    kind: str = "abstract"
    n: int
    m: int

    def step(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def step_many(self, X, U) -> np.ndarray:
        """Propagate a batch of states ``X (K, n)`` under controls ``U (K, m)``."""
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        return np.array([self.step(x, u) for x, u in zip(X, U)]).reshape(-1, self.n)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LinearModel(SystemModel):
    """``x(k+1) = A x(k) + B u(k)``."""

    A: np.ndarray
    B: np.ndarray
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _as_matrix(B, "B")
        if A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ShapeError(f"B must have {A.shape[0]} rows, got {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def step(self, x, u):
        x = _as_vector(x, self.n, "x")
        u = _as_vector(u, self.m, "u")
        return self.A @ x + self.B @ u

    def step_many(self, X, U):
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        U = np.asarray(U, dtype=float).reshape(-1, self.m)
        return X @ self.A.T + U @ self.B.T

    def jacobians(self, x, u):
        return self.A, self.B


@dataclass(frozen=True, eq=False)
class TabulatedModel(SystemModel):
    """Nonlinear plant given by an evaluable map over a bounded box.

    Parameters
    ----------
    f : callable ``f(x, u) -> x_next``
    n, m : state and input dimensions
    x_lower, x_upper, u_lower, u_upper : domain box. Evaluation outside it
        raises :class:`DomainError`; there is no extrapolation.
    jac : optional callable ``jac(x, u) -> (df/dx, df/du)``. Central
        differences are used when omitted.
    """

    f: Callable
    n: int
    m: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    jac: Optional[Callable] = None
    kind: str = field(default="tabulated-nonlinear", init=False)

    def __post_init__(self):
        for name, dim in (("x_lower", self.n), ("x_upper", self.n),
                          ("u_lower", self.m), ("u_upper", self.m)):
            object.__setattr__(self, name, _as_vector(getattr(self, name), dim, name))
        if np.any(self.x_lower > 0) or np.any(self.x_upper < 0) or \
                np.any(self.u_lower > 0) or np.any(self.u_upper < 0):
            raise ConfigError("domain box must contain the origin")
        f0 = np.asarray(self.f(np.zeros(self.n), np.zeros(self.m)), dtype=float)
        if np.max(np.abs(f0)) > TAU_SET:
            raise ConfigError(f"f(0, 0) must vanish, got {f0}")

    def _check_domain(self, x, u):
        if np.any(x < self.x_lower - TAU_SET) or np.any(x > self.x_upper + TAU_SET) or \
                np.any(u < self.u_lower - TAU_SET) or np.any(u > self.u_upper + TAU_SET):
            raise DomainError(f"(x={x}, u={u}) is outside the model domain")

    def step(self, x, u):
        x = _as_vector(x, self.n, "x")
        u = _as_vector(u, self.m, "u")
        self._check_domain(x, u)
        return _as_vector(self.f(x, u), self.n, "f(x, u)")

    def jacobians(self, x, u):
        x = _as_vector(x, self.n, "x")
        u = _as_vector(u, self.m, "u")
        if self.jac is not None:
            Fx, Fu = self.jac(x, u)
            return _as_matrix(Fx, "df/dx"), _as_matrix(Fu, "df/du").reshape(self.n, self.m)
        h = 1e-6
        Fx = np.empty((self.n, self.n))
        Fu = np.empty((self.n, self.m))
        # one-sided at the domain boundary so evaluation stays inside
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            hi = np.minimum(x + e, self.x_upper)
            lo = np.maximum(x - e, self.x_lower)
            Fx[:, j] = (self.step(hi, u) - self.step(lo, u)) / (hi[j] - lo[j])
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = h
            hi = np.minimum(u + e, self.u_upper)
            lo = np.maximum(u - e, self.u_lower)
            Fu[:, j] = (self.step(x, hi) - self.step(x, lo)) / (hi[j] - lo[j])
        return Fx, Fu


def step(model: SystemModel, x, u) -> np.ndarray:
    """Return ``f(x, u)``. Input bounds are not checked here."""
    return model.step(x, u)


@dataclass(frozen=True, eq=False)
class InputBox:
    """``|u_i| <= u_bar_i``; an infinite bound means the axis is unconstrained."""

    u_bar: np.ndarray

    def __post_init__(self):
        u_bar = np.atleast_1d(np.asarray(self.u_bar, dtype=float))
        if u_bar.ndim != 1 or u_bar.size == 0:
            raise ConfigError("u_bar must be a non-empty vector")
        if np.any(~(u_bar > 0)):
            raise ConfigError(f"input bounds must be strictly positive, got {u_bar}")
        u_bar.setflags(write=False)
        object.__setattr__(self, "u_bar", u_bar)

    @classmethod
    def unbounded(cls, m: int) -> "InputBox":
        return cls(np.full(m, np.inf))

    @property
    def dim(self):
        return self.u_bar.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.u_bar)))

    @property
    def lower(self):
        return -self.u_bar

    @property
    def upper(self):
        return self.u_bar

    def contains(self, u, tol=TAU_SET) -> bool:
        u = _as_vector(u, self.dim, "u")
        return bool(np.all(np.abs(u) <= self.u_bar + tol))

    def project(self, u):
        return np.clip(u, -self.u_bar, self.u_bar)


@dataclass(frozen=True, eq=False)
class StateSet:
    """All of R^n, or a box ``lower <= x <= upper`` containing the origin."""

    n: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("state dimension must be at least 1")
        if (self.lower is None) != (self.upper is None):
            raise ConfigError("state box needs both lower and upper bounds")
        if self.lower is not None:
            lo = _as_vector(self.lower, self.n, "lower")
            hi = _as_vector(self.upper, self.n, "upper")
            if np.any(lo >= hi):
                raise ConfigError("state box needs lower < upper componentwise")
            if np.any(lo > 0) or np.any(hi < 0):
                raise ConfigError("state set must contain the origin")
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def all_space(cls, n: int) -> "StateSet":
        return cls(n)

    @classmethod
    def box(cls, lower, upper) -> "StateSet":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        return cls(lower.size, lower, upper)

    @property
    def kind(self):
        return "all-space" if self.lower is None else "box"

    @property
    def dim(self):
        return self.n

    def contains(self, x, tol=TAU_SET) -> bool:
        x = _as_vector(x, self.n, "x")
        if self.lower is None:
            return True
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_many(self, X, tol=TAU_SET) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        if self.lower is None:
            return np.ones(len(X), dtype=bool)
        return np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=1)


def contains(s, v, tol=TAU_SET) -> bool:
    """Componentwise membership of ``v`` in an :class:`InputBox` or :class:`StateSet`."""
    return s.contains(v, tol)


@dataclass(frozen=True, eq=False)
class Constraints:
    """Input box and state set of one problem."""

    inputs: InputBox
    states: StateSet

    @classmethod
    def unconstrained(cls, n: int, m: int) -> "Constraints":
        return cls(InputBox.unbounded(m), StateSet.all_space(n))

    def check(self, model: SystemModel):
        if self.inputs.dim != model.m or self.states.dim != model.n:
            raise ShapeError(
                f"constraint dimensions (n={self.states.dim}, m={self.inputs.dim}) "
                f"do not match the model (n={model.n}, m={model.m})")
