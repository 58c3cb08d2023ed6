"""The two-state agent and its five named closed-loop runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cost import QuadraticCost
from .dynamics import Constraints, LinearModel
from .mpcs import MPCSController, MpcsConfig
from .sim import (CONVERGED, DIVERGED, ClosedLoopTrace, MPCController, OpenLoop, Thm1Monitor,
                  Thm2Monitor, simulate)

AGENT_A = np.array([[0.7, 0.1], [0.8, 0.6]])
AGENT_B = np.array([[0.8], [-0.5]])
AGENT_X0 = np.array([1.0, 1.0])
# decrease margin for the agent MPCS run; with delta = 0 the run stalls
# because the one-step value has a one-dimensional null space here
AGENT_MPCS_DELTA = 0.1


def agent_model() -> LinearModel:
    return LinearModel(AGENT_A, AGENT_B)


def agent_cost(reweighted: bool = False) -> QuadraticCost:
    Q = np.diag([1.0, 0.25]) if reweighted else np.eye(2)
    return QuadraticCost(Q, np.zeros((1, 1)))


@dataclass(frozen=True)
class Example:
    name: str
    expected: str
    build: Callable
    description: str


def _open(model, sets):
    return OpenLoop(model.m), agent_cost(), ()


def _mpc(model, sets, reweighted=False, N=1):
    l = agent_cost(reweighted)
    ctrl = MPCController(model, l, sets, N)
    return ctrl, l, (Thm1Monitor(model, l, sets), Thm2Monitor(model, l, sets))


def _mpcs(model, sets, delta=AGENT_MPCS_DELTA):
    l = agent_cost()
    ctrl = MPCSController(model, l, sets, MpcsConfig(1, delta=delta))
    return ctrl, l, (Thm1Monitor(model, l, sets), Thm2Monitor(model, l, sets))


EXAMPLES = {
    "agent-open": Example("agent-open", CONVERGED, _open, "no control, u = 0"),
    "agent-mpc": Example("agent-mpc", DIVERGED, _mpc, "MPC, N = 1, Q = I, R = 0"),
    "agent-reweighted": Example("agent-reweighted", CONVERGED,
                                lambda m, s: _mpc(m, s, reweighted=True),
                                "MPC, N = 1, Q = diag(1, 0.25), R = 0"),
    "agent-n2": Example("agent-n2", CONVERGED, lambda m, s: _mpc(m, s, N=2),
                        "MPC, N = 2, Q = I, R = 0"),
    "agent-mpcs": Example("agent-mpcs", CONVERGED, _mpcs,
                          f"MPCS, N = 1, Q = I, R = 0, delta = {AGENT_MPCS_DELTA}"),
}


def run_example(name: str, steps: int = 100, x0=AGENT_X0, delta=None) -> ClosedLoopTrace:
    """Simulate one named agent run from ``x0``.

    ``delta`` overrides the MPCS decrease margin (ignored by the other runs).
    """
    ex = EXAMPLES[name]
    model = agent_model()
    sets = Constraints.unconstrained(2, 1)
    if name == "agent-mpcs" and delta is not None:
        ctrl, _, monitors = _mpcs(model, sets, delta)
    else:
        ctrl, _, monitors = ex.build(model, sets)
    return simulate(model, ctrl, x0, steps, monitors, label=name)
