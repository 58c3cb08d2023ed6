"""Closed-loop simulation, trace recording and run classification."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cost import StageCost, TerminalWeight
from .dynamics import Constraints, LinearModel, SystemModel
from .errors import ArgumentError
from .solver import OPTIMAL, HorizonSolution, solve_horizon
from .stability import TAU_CERT, Certificate, check_thm1, check_thm2

CONVERGED = "converged"
DIVERGED = "diverged"
MAX_STEPS = "max-steps"
INFEASIBLE_AT = "infeasible-at-{k}"

CONVERGE_NORM = 1e-6
CONVERGE_RUN = 5
DIVERGE_NORM = 1e6
DIVERGE_FACTOR = 1e3
# trend rule applied only when the step budget ends unclassified
TREND_WINDOW = 20
TREND_MARGIN = 1e-3


@dataclass
class ControlAction:
    u: np.ndarray
    status: str = OPTIMAL
    J_star: Optional[float] = None
    alpha: Optional[float] = None
    sol: Optional[HorizonSolution] = None
    record: object = None


class OpenLoop:
    """``u = 0``."""

    label = "open-loop"

    def __init__(self, m: int):
        self.m = m

    def __call__(self, x, k):
        return ControlAction(np.zeros(self.m))


class StaticGain:
    """``u = K x``."""

    label = "static-gain"

    def __init__(self, K):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))

    def __call__(self, x, k):
        return ControlAction(self.K @ x)


class MPCController:
    """Receding-horizon controller without (or with) terminal weight."""

    label = "mpc"

    def __init__(self, model: SystemModel, l: StageCost, sets: Constraints, N: int,
                 terminal: Optional[TerminalWeight] = None):
        self.model, self.l, self.sets, self.N = model, l, sets, N
        self.terminal = terminal

    def __call__(self, x, k):
        sol = solve_horizon(self.model, self.l, self.sets, x, self.N, terminal=self.terminal)
        return ControlAction(sol.U[0], sol.status, sol.J, sol=sol)


class Thm1Monitor:
    """Attach the no-terminal-weight certificate to each optimal step."""

    def __init__(self, model, l, sets):
        self.model, self.l, self.sets = model, l, sets

    def __call__(self, k, x, action):
        if action.sol is None or not action.sol.optimal:
            return None
        return check_thm1(action.sol, self.model, self.l, self.sets, k=k)


class Thm2Monitor(Thm1Monitor):
    """Attach the terminal-set certificate to each optimal step."""

    def __call__(self, k, x, action):
        if action.sol is None or not action.sol.optimal:
            return None
        return check_thm2(x, action.sol, self.model, self.l, self.sets, k=k)


@dataclass
class ClosedLoopTrace:
    """States ``X[k]``, applied controls ``U[k]`` and per-step diagnostics."""

    X: np.ndarray
    U: np.ndarray
    J: np.ndarray
    alpha: np.ndarray
    classification: str
    certificates: list = field(default_factory=list)
    records: list = field(default_factory=list)
    converged_at: Optional[int] = None
    infeasible_at: Optional[int] = None
    rate: Optional[float] = None
    label: str = ""
    model: Optional[SystemModel] = None

    @property
    def steps(self) -> int:
        return len(self.U)

    @property
    def x0(self):
        return self.X[0]

    def margins(self, kind):
        out = np.full(len(self.X), np.nan)
        for c in self.certificates:
            if c.kind == kind and c.k is not None:
                out[c.k] = c.margin
        return out

    def alpha_monotone(self, tol=TAU_CERT) -> bool:
        a = self.alpha[np.isfinite(self.alpha)]
        return bool(np.all(np.diff(a) <= tol))

    def J_monotone(self, tol=TAU_CERT) -> bool:
        j = self.J[np.isfinite(self.J)]
        return bool(np.all(np.diff(j) <= tol))

    def to_csv(self, path):
        """Write ``k,x1..xn,u1..um,J_star,alpha,thm1_margin,thm2_margin,class``."""
        n = self.X.shape[1]
        m = self.U.shape[1] if self.U.ndim == 2 and self.U.size else 0
        if m == 0 and self.model is not None:
            m = self.model.m
        t1, t2 = self.margins("thm1"), self.margins("thm2")
        fmt = lambda v: "" if v is None or not np.isfinite(v) else f"{v:.10g}"
        header = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + \
            ["J_star", "alpha", "thm1_margin", "thm2_margin", "class"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            last = len(self.X) - 1
            for k in range(len(self.X)):
                u = self.U[k] if k < len(self.U) else [None] * m
                J = self.J[k] if k < len(self.J) else None
                a = self.alpha[k] if k < len(self.alpha) else None
                w.writerow([k] + [fmt(v) for v in self.X[k]] + [fmt(v) for v in u] +
                           [fmt(J), fmt(a), fmt(t1[k]), fmt(t2[k]),
                            self.classification if k == last else ""])


def _trend(norms):
    K = len(norms) - 1
    W = min(TREND_WINDOW, K // 2)
    if W < 2:
        return None, None
    seg = np.asarray(norms[K - W:])
    if seg[0] <= 0 or seg[-1] <= 0:
        return None, None
    rate = float((seg[-1] / seg[0]) ** (1.0 / W))
    d = np.diff(seg)
    if rate <= 1 - TREND_MARGIN and np.all(d <= 0) and norms[-1] < norms[0]:
        return CONVERGED, rate
    if rate >= 1 + TREND_MARGIN and np.all(d >= 0) and norms[-1] > norms[0]:
        return DIVERGED, rate
    return None, rate


def simulate(model: SystemModel, controller: Callable, x0, steps: int,
             monitors: Sequence[Callable] = (), label: str = "") -> ClosedLoopTrace:
    """Apply ``controller(x, k)`` in closed loop for at most ``steps`` steps.

    Classification, checked on every visited state:

    * converged: ``|x| < 1e-6`` on 5 consecutive states
    * diverged: ``|x| > 1e6`` or ``|x| > 1e3 |x0|``
    * infeasible-at-k: the controller reported a non-optimal status at ``k``

    If the budget runs out first, the geometric rate over the last
    ``TREND_WINDOW`` steps decides: a monotone decay at rate ``<= 0.999``
    ending below ``|x0|`` counts as converged, a monotone growth at rate
    ``>= 1.001`` ending above ``|x0|`` as diverged, anything else is
    ``max-steps``.
    """
    x = np.asarray(x0, dtype=float).reshape(-1)
    x_init = x.copy()
    n0 = float(np.linalg.norm(x))
    X, U, J, alpha, certs, records = [x.copy()], [], [], [], [], []
    norms = [n0]
    small_run = 0
    classification = None
    converged_at = infeasible_at = None
    k = 0
    while True:
        nx = norms[-1]
        if nx > DIVERGE_NORM or (n0 > 0 and nx > DIVERGE_FACTOR * n0):
            classification = DIVERGED
            break
        small_run = small_run + 1 if nx < CONVERGE_NORM else 0
        if small_run >= CONVERGE_RUN:
            classification = CONVERGED
            converged_at = k - CONVERGE_RUN + 1
            break
        if k >= steps:
            break
        action = controller(x, k)
        if action.status != OPTIMAL:
            classification = INFEASIBLE_AT.format(k=k)
            infeasible_at = k
            break
        for mon in monitors:
            c = mon(k, x, action)
            if c is not None:
                certs.append(c)
        u = np.asarray(action.u, dtype=float).reshape(-1)
        U.append(u)
        J.append(np.nan if action.J_star is None else action.J_star)
        alpha.append(np.nan if action.alpha is None else action.alpha)
        records.append(action.record)
        x = model.step(x, u)
        X.append(x.copy())
        norms.append(float(np.linalg.norm(x)))
        k += 1
    rate = None
    if classification is None:
        classification, rate = _trend(norms)
        classification = classification or MAX_STEPS
    m = model.m
    return ClosedLoopTrace(
        X=np.array(X), U=np.array(U).reshape(-1, m), J=np.array(J, dtype=float),
        alpha=np.array(alpha, dtype=float), classification=classification,
        certificates=certs, records=records, converged_at=converged_at,
        infeasible_at=infeasible_at, rate=rate,
        label=label or getattr(controller, "label", ""), model=model)


@dataclass
class RunSummary:
    label: str
    classification: str
    final_norm: float
    steps_to_convergence: Optional[int]
    alpha_monotone: Optional[bool]
    J_monotone: Optional[bool]


def _same_model(a, b):
    if a is b:
        return True
    if isinstance(a, LinearModel) and isinstance(b, LinearModel):
        return np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B)
    return False


def compare_runs(traces: Sequence[ClosedLoopTrace]) -> list[RunSummary]:
    """One summary row per trace; traces must share model and initial state."""
    if not traces:
        return []
    ref = traces[0]
    for t in traces[1:]:
        if t.X.shape[1] != ref.X.shape[1] or not np.array_equal(t.x0, ref.x0):
            raise ArgumentError("traces do not share the initial state")
        if ref.model is not None and t.model is not None and not _same_model(t.model, ref.model):
            raise ArgumentError("traces do not share the model")
    rows = []
    for t in traces:
        has_alpha = bool(np.any(np.isfinite(t.alpha)))
        has_J = bool(np.any(np.isfinite(t.J)))
        rows.append(RunSummary(
            label=t.label, classification=t.classification,
            final_norm=float(np.linalg.norm(t.X[-1])),
            steps_to_convergence=t.converged_at,
            alpha_monotone=t.alpha_monotone() if has_alpha else None,
            J_monotone=t.J_monotone() if has_J else None))
    return rows


def format_summary(rows: Sequence[RunSummary]) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.10g}"
        return str(v)

    head = ["run", "class", "final |x|", "converged at", "alpha mono", "J* mono"]
    body = [[r.label, r.classification, r.final_norm, r.steps_to_convergence,
             r.alpha_monotone, r.J_monotone] for r in rows]
    table = [head] + [[cell(v) for v in b] for b in body]
    widths = [max(len(r[i]) for r in table) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table)
