"""Stability certificates for finite-horizon MPC with and without terminal weight.

Each check returns a :class:`Certificate` holding the two sides of its
inequality ``lhs <= rhs``. ``margin = rhs - lhs`` and the verdict is
``margin >= -TAU_CERT + delta``; a positive ``delta`` asks for a strict
(asymptotic) margin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .cost import QuadraticCost, StageCost, TerminalWeight
from .dynamics import Constraints, SystemModel
from .errors import ArgumentError, ConfigError
from .solver import (HorizonSolution, lq_gain_and_value, lq_horizon_gains,
                     one_step_value)

TAU_CERT = 1e-7

KINDS = ("thm1", "thm2", "thm_tw", "classic", "first-order")


@dataclass
class Certificate:
    kind: str
    lhs: float
    rhs: float
    k: Optional[int] = None
    state: Optional[np.ndarray] = None
    infeasible: bool = False
    delta: float = 0.0
    margin: float = field(init=False)
    verdict: bool = field(init=False)

    def __post_init__(self):
        self.margin = float(self.rhs - self.lhs) if not self.infeasible else -np.inf
        self.verdict = bool(not self.infeasible and self.margin >= self.delta - TAU_CERT)

    def row(self):
        return {"kind": self.kind, "k": "" if self.k is None else self.k,
                "lhs": f"{self.lhs:.10g}", "rhs": f"{self.rhs:.10g}",
                "margin": f"{self.margin:.10g}", "verdict": int(self.verdict)}


def write_certificates(path, certificates):
    """One CSV row per certificate: ``kind,k,lhs,rhs,margin,verdict``."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kind", "k", "lhs", "rhs", "margin", "verdict"])
        w.writeheader()
        for c in certificates:
            w.writerow(c.row())


def _require_optimal(sol):
    if not sol.optimal:
        raise ArgumentError(f"certificate needs an optimal solution, got status {sol.status!r}")


def check_thm1(sol: HorizonSolution, model: SystemModel, l: StageCost, sets: Constraints,
               k=None, delta=0.0) -> Certificate:
    """No-terminal-weight condition: ``m(x*_N) <= l(x*_1, u*_0)``.

    The existence of a tail control is discharged by solving the one-step
    problem at the terminal state.
    """
    _require_optimal(sol)
    rhs = l.value(sol.X[0], sol.U[0])
    osv = one_step_value(model, l, sets, sol.X[-1])
    if not osv.feasible:
        return Certificate("thm1", np.inf, rhs, k, sol.x0, infeasible=True, delta=delta)
    return Certificate("thm1", osv.m_val, rhs, k, sol.x0, delta=delta)


def check_thm2(x_now, sol: HorizonSolution, model: SystemModel, l: StageCost,
               sets: Constraints, k=None, delta=0.0) -> Certificate:
    """Terminal-set condition: ``m(x*_N) <= m(x(k))``."""
    _require_optimal(sol)
    now = one_step_value(model, l, sets, x_now)
    end = one_step_value(model, l, sets, sol.X[-1])
    x_now = np.asarray(x_now, dtype=float).reshape(-1)
    if not (now.feasible and end.feasible):
        return Certificate("thm2", end.m_val, now.m_val, k, x_now, infeasible=True, delta=delta)
    return Certificate("thm2", end.m_val, now.m_val, k, x_now, delta=delta)


def check_thm_tw(sol_tw: HorizonSolution, model: SystemModel, l: StageCost,
                 lT: TerminalWeight, sets: Constraints, k=None, delta=0.0) -> Certificate:
    """Terminal-weight condition.

    ``l(x*_N, u*_{N-1}) - l(x*_1, u*_0) + min_u l_T(f(x*_N, u), u)
    - l_T(x*_N, u*_{N-1}) <= 0``, reported with ``rhs = l(x*_1, u*_0)`` so
    that ``lT = l`` reproduces :func:`check_thm1` exactly. Only ``N >= 2``
    is accepted: with ``N = 1`` the first and last stage coincide.
    """
    _require_optimal(sol_tw)
    if sol_tw.N < 2:
        raise ArgumentError("terminal-weight certificate needs N >= 2 "
                            "(with N = 1 the first and last stage coincide)")
    last = lT.last_stage(l)
    xN, uN1 = sol_tw.X[-1], sol_tw.U[-1]
    rhs = l.value(sol_tw.X[0], sol_tw.U[0])
    osv = one_step_value(model, last, sets, xN)
    if not osv.feasible:
        return Certificate("thm_tw", np.inf, rhs, k, sol_tw.x0, infeasible=True, delta=delta)
    lhs = l.value(xN, uN1) + osv.m_val - last.value(xN, uN1)
    return Certificate("thm_tw", lhs, rhs, k, sol_tw.x0, delta=delta)


def check_classic(model: SystemModel, l_orig: QuadraticCost, p: TerminalWeight,
                  sets: Constraints, x_terminal, u_terminal, k=None) -> Certificate:
    """Descent property ``p(f(x, u)) - p(x) + l'(x, u) <= 0`` at one point.

    ``l_orig`` is the running cost evaluated at the current state, i.e.
    ``q(x) + r(u)``.
    """
    x = np.asarray(x_terminal, dtype=float).reshape(-1)
    u = np.asarray(u_terminal, dtype=float).reshape(-1)
    if not sets.inputs.contains(u):
        raise ArgumentError(f"terminal control {u} is outside the input box")
    lhs = p(model.step(x, u)) - p(x) + l_orig.value(x, u)
    return Certificate("classic", lhs, 0.0, k, x)


class FirstOrderRegion(NamedTuple):
    new: bool
    prior: bool
    closed_loop_pole: float


def first_order_region(a, b, q, r) -> FirstOrderRegion:
    """Stability of one-step MPC on ``x+ = a x + b u`` with cost ``q x+^2 + r u^2``.

    The closed loop is ``x+ = a r / (r + b^2 q) x``; ``new`` is the exact
    condition ``|pole| < 1`` and ``prior`` the older sufficient test
    ``a^2 r / (r + b^2 q) < 1``.
    """
    if not q > 0 or r < 0:
        raise ArgumentError("need q > 0 and r >= 0")
    den = r + b * b * q
    if den == 0:
        raise ArgumentError("degenerate problem: b = 0 and r = 0")
    pole = a * r / den
    return FirstOrderRegion(abs(pole) < 1, a * a * r / den < 1, pole)


def _range_basis(M, tol=1e-10):
    w, V = np.linalg.eigh(M)
    keep = w > tol * max(1.0, np.abs(w).max())
    return V[:, keep]


def lq_n1_certificate(A, B, Q, R=None) -> Certificate:
    """Global one-step certificate ``(A+BK)' M (A+BK) <= M`` on ``range(M)``.

    ``lhs = 0`` and ``rhs`` is the smallest eigenvalue of
    ``M - (A+BK)' M (A+BK)`` restricted to ``range(M)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if R is None:
        R = np.zeros((B.shape[1], B.shape[1]))
    K, M = lq_gain_and_value(A, B, Q, R)
    Acl = A + B @ K
    D = M - Acl.T @ M @ Acl
    V = _range_basis(M)
    lam = 0.0 if V.shape[1] == 0 else float(np.linalg.eigvalsh(V.T @ D @ V).min())
    return Certificate("thm1", 0.0, lam)


class HorizonForms(NamedTuple):
    """Quadratic forms ``x' S x`` whose nonnegativity certifies stability."""

    thm1: np.ndarray
    thm2: np.ndarray

    @staticmethod
    def coefficients(S):
        """``(s11, 2 s12, s22)`` of a 2x2 form ``s11 x1^2 + 2 s12 x1 x2 + s22 x2^2``."""
        return float(S[0, 0]), float(2 * S[0, 1]), float(S[1, 1])


def lq_horizon_forms(A, B, Q, R, N: int) -> HorizonForms:
    """Closed-form certificate forms for unconstrained LQ MPC of horizon ``N``.

    ``thm1 = l(x*_1, u*_0) - m(x*_N)`` and ``thm2 = m(x) - m(x*_N)``, both
    as quadratic forms in the current state.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    gains, _ = lq_horizon_gains(A, B, Q, R, N)
    _, M = lq_gain_and_value(A, B, Q, R)
    n = A.shape[0]
    Phi = np.eye(n)
    first = None
    for i, K in enumerate(gains):
        Phi = (A + B @ K) @ Phi
        if i == 0:
            first = (Phi.copy(), K.copy())
    Phi1, K0 = first
    stage1 = Phi1.T @ Q @ Phi1 + K0.T @ R @ K0
    end = Phi.T @ M @ Phi
    sym = lambda S: 0.5 * (S + S.T)
    return HorizonForms(sym(stage1 - end), sym(M - end))


def form_is_psd(S, tol=TAU_CERT) -> bool:
    return bool(np.linalg.eigvalsh(0.5 * (S + S.T)).min() >= -tol)


def require_definite(l: StageCost):
    """Certificates rely on ``Q`` being positive definite."""
    if isinstance(l, QuadraticCost) and not l.state_definite:
        raise ConfigError("certificates need a positive definite state weight Q")
