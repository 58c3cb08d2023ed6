import numpy as np
import pytest

from mpcstab import Constraints, LinearModel, QuadraticCost

AGENT_A = np.array([[0.7, 0.1], [0.8, 0.6]])
AGENT_B = np.array([[0.8], [-0.5]])


@pytest.fixture
def agent():
    return LinearModel(AGENT_A, AGENT_B)


@pytest.fixture
def agent_cost():
    return QuadraticCost(np.eye(2), np.zeros((1, 1)))


@pytest.fixture
def free2():
    return Constraints.unconstrained(2, 1)


@pytest.fixture
def free1():
    return Constraints.unconstrained(1, 1)


def scalar_problem(a, b, q, r):
    return LinearModel([[a]], [[b]]), QuadraticCost([[q]], [[r]])


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
