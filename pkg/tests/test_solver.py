import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcstab import (ArgumentError, BudgetError, Constraints, GridSpec, InputBox, LinearModel,
                     QuadraticCost, SingularityError, StateSet, TerminalWeight, brute_force_dp,
                     horizon_cost, lq_gain_and_value, one_step_value, solve_horizon,
                     solve_lq_horizon, stage)
from mpcstab.solver import RankDeficiencyWarning, condensed_objective

from conftest import AGENT_A, AGENT_B, scalar_problem

# one-step value matrix of the agent with Q = I, R = 0, reference value to four decimals
AGENT_M = np.array([[1.1012, 0.5896], [0.5896, 0.3156]])


def _random_lq(rng, n, boxed=False, state_box=False):
    A = rng.uniform(-1.5, 1.5, (n, n))
    B = rng.uniform(-1, 1, (n, 1))
    B[np.abs(B) < 0.2] = 0.5
    l = QuadraticCost(np.diag(rng.uniform(0.2, 2, n)), [[rng.uniform(0, 1)]])
    u_bar = [rng.uniform(0.3, 2)] if boxed else [np.inf]
    states = StateSet.box(-2.5 * np.ones(n), 2.5 * np.ones(n)) if state_box else StateSet.all_space(n)
    return LinearModel(A, B), l, Constraints(InputBox(u_bar), states)


# -- closed forms -----------------------------------------------------------


def test_scalar_closed_form_horizon_one():
    # u* = -a b q / (r + b^2 q) x = -1, x1 = 1, J* = a^2 q r / (r + b^2 q) x^2 = 2
    model, l = scalar_problem(2, 1, 1, 1)
    sol = solve_horizon(model, l, Constraints.unconstrained(1, 1), [1.0], 1)
    assert sol.optimal
    assert sol.U[0, 0] == pytest.approx(-1.0, abs=1e-7)
    assert sol.X[0, 0] == pytest.approx(1.0, abs=1e-7)
    assert sol.J == pytest.approx(2.0, abs=1e-9)


def test_origin_is_optimal(agent, agent_cost, free2):
    sol = solve_horizon(agent, agent_cost, free2, [0, 0], 3)
    assert sol.optimal
    assert np.all(sol.U == 0) and sol.J == 0.0


def test_agent_one_step_gain_and_value(agent, agent_cost, free2):
    # K = -(B'QB)^-1 B'QA = (1/0.89) (-0.16, 0.22)
    K = np.array([[-0.16, 0.22]]) / 0.89
    sol = solve_horizon(agent, agent_cost, free2, [1, 1], 1)
    assert sol.U[0, 0] == pytest.approx(float((K @ [1, 1])[0]), abs=1e-7)
    assert sol.U[0, 0] == pytest.approx(0.06742, abs=1e-5)
    assert sol.J == pytest.approx(AGENT_M.sum(), abs=5e-4 * 4)


def test_lq_gain_and_value_agent():
    K, M = lq_gain_and_value(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)))
    np.testing.assert_allclose(M, AGENT_M, atol=5e-4)
    np.testing.assert_allclose(K, np.array([[-0.16, 0.22]]) / 0.89, atol=1e-12)
    np.testing.assert_allclose(M, M.T, atol=1e-15)
    assert np.linalg.eigvalsh(M).min() >= -1e-12


def test_lq_gain_and_value_deadbeat():
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    B = np.array([[2.0, 0.0], [1.0, 1.0]])
    K, M = lq_gain_and_value(A, B, np.eye(2), np.zeros((2, 2)))
    np.testing.assert_allclose(M, 0, atol=1e-12)
    np.testing.assert_allclose(K, -np.linalg.solve(B, A), atol=1e-12)


@pytest.mark.parametrize("a,b,q,r", [(2, 1, 1, 1), (0.5, -2, 3, 0.1), (-3, 0.4, 0.2, 7)])
def test_lq_gain_and_value_scalar(a, b, q, r):
    K, M = lq_gain_and_value([[a]], [[b]], [[q]], [[r]])
    assert K[0, 0] == pytest.approx(-a * b * q / (r + b * b * q))
    assert M[0, 0] == pytest.approx(a * a * q * r / (r + b * b * q))


def test_lq_singular_pseudoinverse_and_error():
    A, B = np.eye(2), np.zeros((2, 1))
    with pytest.warns(RankDeficiencyWarning):
        K, M = lq_gain_and_value(A, B, np.eye(2), np.zeros((1, 1)))
    np.testing.assert_allclose(K, 0)
    np.testing.assert_allclose(M, np.eye(2))
    with pytest.raises(SingularityError):
        lq_gain_and_value(A, B, np.eye(2), np.zeros((1, 1)), allow_singular=False)


def test_one_step_value_examples(agent, agent_cost, free2):
    assert one_step_value(agent, agent_cost, free2, [1, 0]).m_val == pytest.approx(1.1012, abs=5e-4)
    o = one_step_value(agent, agent_cost, free2, [0, 0])
    assert o.m_val == 0 and np.all(o.u_star == 0)
    model, l = scalar_problem(2, 1, 1, 1)
    assert one_step_value(model, l, Constraints.unconstrained(1, 1), [1.0]).m_val == pytest.approx(2.0)


def test_one_step_value_matches_grid_search():
    model, l = scalar_problem(2, 1, 1, 1)
    U = np.linspace(-5, 5, 200_001)
    grid_min = np.min((2 + U) ** 2 + U ** 2)
    m = one_step_value(model, l, Constraints.unconstrained(1, 1), [1.0]).m_val
    assert m == pytest.approx(grid_min, abs=1e-8)


def test_one_step_value_infeasible_when_state_box_unreachable():
    model, l = scalar_problem(2, 1, 1, 0)
    sets = Constraints(InputBox([0.1]), StateSet.box([-1.0], [1.0]))
    assert not one_step_value(model, l, sets, [0.9]).feasible


def test_one_step_value_general_path_matches_closed_form():
    from mpcstab.cost import FunctionCost
    model, l = scalar_problem(1.5, 0.7, 2.0, 0.3)
    f = FunctionCost(lambda x, u: float(2.0 * x @ x + 0.3 * u @ u), 1, 1,
                     grad_fn=lambda x, u: (4.0 * x, 0.6 * u))
    got = one_step_value(model, f, Constraints.unconstrained(1, 1), [0.8]).m_val
    want = 1.5 ** 2 * 2 * 0.3 / (0.3 + 0.49 * 2) * 0.64
    assert got == pytest.approx(want, rel=1e-7)


# -- errors -------------------------------------------------------------------


def test_horizon_must_be_positive(agent, agent_cost, free2):
    with pytest.raises(ArgumentError):
        solve_horizon(agent, agent_cost, free2, [1, 1], 0)


def test_x0_outside_state_set(agent, agent_cost):
    sets = Constraints(InputBox.unbounded(1), StateSet.box([-1, -1], [1, 1]))
    with pytest.raises(ArgumentError):
        solve_horizon(agent, agent_cost, sets, [2, 0], 1)


def test_brute_force_budget(agent, agent_cost, free2):
    with pytest.raises(BudgetError):
        brute_force_dp(agent, agent_cost, free2, [1, 1], 5, GridSpec(u_bound=1))
    with pytest.raises(BudgetError):
        brute_force_dp(agent, agent_cost, free2, [1, 1], 3, GridSpec(points=2001, u_bound=1))


# -- oracle agreement -----------------------------------------------------------


def test_brute_force_scalar_closed_form():
    model, l = scalar_problem(2, 1, 1, 1)
    bf = brute_force_dp(model, l, Constraints.unconstrained(1, 1), [1.0], 1,
                        GridSpec(points=2001, u_bound=5))
    assert bf.J == pytest.approx(2.0, abs=1e-3)


def test_brute_force_origin(agent, agent_cost, free2):
    bf = brute_force_dp(agent, agent_cost, free2, [0, 0], 2, GridSpec(points=101, u_bound=1))
    assert bf.J == 0.0 and np.all(bf.U == 0)


def test_brute_force_agent_one_step(agent, agent_cost, free2):
    bf = brute_force_dp(agent, agent_cost, free2, [1, 1], 1, GridSpec(points=4001, u_bound=1))
    K, M = lq_gain_and_value(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)))
    assert bf.J == pytest.approx(float(np.ones(2) @ M @ np.ones(2)), abs=1e-4)


def test_denominator_confirmed_by_brute_force():
    # r + b^2 q and r + b q^2 differ when b != q; the grid oracle picks the former
    a, b, q, r = 1.5, 2.0, 0.5, 1.0
    model, l = scalar_problem(a, b, q, r)
    bf = brute_force_dp(model, l, Constraints.unconstrained(1, 1), [1.0], 1,
                        GridSpec(points=2001, u_bound=2, refine_levels=3))
    right = a * a * q * r / (r + b * b * q)
    wrong = a * a * q * r / (r + b * q * q)
    assert bf.J == pytest.approx(right, abs=1e-9)
    assert abs(bf.J - wrong) > 0.1


@pytest.mark.parametrize("seed", range(6))
def test_constrained_solve_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n, boxed=True, state_box=True)
    x0 = rng.uniform(-1, 1, n)
    N = 1 + seed % 3
    bf = brute_force_dp(model, l, sets, x0, N, GridSpec(points=2001, refine_levels=2))
    sol = solve_horizon(model, l, sets, x0, N)
    assert sol.optimal
    assert abs(sol.J - bf.J) <= 1e-3
    assert sol.J >= bf.J - 1e-9


def test_lq_horizon_matches_numeric_path(agent, agent_cost, free2):
    for N in (1, 2, 3):
        exact = solve_lq_horizon(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), [1, 0.5], N)
        num = solve_horizon(agent, agent_cost, free2, [1, 0.5], N)
        assert exact.J == pytest.approx(num.J, abs=1e-6)
        np.testing.assert_allclose(exact.X, num.X, atol=1e-6)


def test_lq_horizon_one_is_gain():
    K, M = lq_gain_and_value(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)))
    sol = solve_lq_horizon(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), [1, -2], 1)
    np.testing.assert_allclose(sol.U[0], K @ [1, -2], atol=1e-12)
    assert sol.J == pytest.approx(float(np.array([1, -2]) @ M @ [1, -2]), abs=1e-12)


def test_terminal_weight_changes_last_stage(agent, agent_cost, free2):
    P = TerminalWeight(P=5 * np.eye(2))
    sol = solve_horizon(agent, agent_cost, free2, [1, 1], 2, terminal=P)
    assert sol.optimal
    assert sol.J == pytest.approx(horizon_cost(agent_cost, sol.X, sol.U, P), abs=1e-9)


def test_min_norm_tie_break():
    # B has a zero column: that input has no effect, so the optimum leaves it at zero
    model = LinearModel([[0.5]], [[1.0, 0.0]])
    l = QuadraticCost([[1.0]], np.zeros((2, 2)))
    sol = solve_horizon(model, l, Constraints.unconstrained(1, 2), [1.0], 1)
    assert sol.U[0, 1] == 0.0


# -- invariants -------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.booleans(), st.booleans())
def test_solution_invariants(seed, N, boxed, state_box):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n, boxed, state_box)
    x0 = rng.uniform(-1, 1, n)
    sol = solve_horizon(model, l, sets, x0, N)
    if not sol.optimal:
        return
    x = x0
    for i in range(N):
        x = model.step(x, sol.U[i])
        np.testing.assert_allclose(sol.X[i], x, atol=1e-9)
        assert sets.inputs.contains(sol.U[i])
        assert sets.states.contains(sol.X[i])
    assert sol.J == pytest.approx(horizon_cost(l, sol.X, sol.U), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_horizon_one_equals_one_step_value(seed, boxed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n, boxed)
    x = rng.uniform(-1, 1, n)
    sol = solve_horizon(model, l, sets, x, 1)
    osv = one_step_value(model, l, sets, x)
    assert sol.J == pytest.approx(osv.m_val, abs=1e-9)
    assert osv.m_val == pytest.approx(stage(l, osv.x_next, osv.u_star), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_one_step_value_is_a_lower_bound(seed, boxed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n, boxed)
    x = rng.uniform(-1, 1, n)
    m = one_step_value(model, l, sets, x).m_val
    ub = sets.inputs.u_bar[0] if np.isfinite(sets.inputs.u_bar[0]) else 5.0
    for u in np.linspace(-ub, ub, 101):
        assert m <= stage(l, model.step(x, [u]), [u]) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_principle_of_optimality(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n)
    x0 = rng.uniform(-1, 1, n)
    N = 3
    full = solve_horizon(model, l, sets, x0, N)
    tail = solve_horizon(model, l, sets, full.X[0], N - 1)
    assert full.J - stage(l, full.X[0], full.U[0]) == pytest.approx(tail.J, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_gradient_matches_central_differences(seed, N):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n)
    fun, grad = condensed_objective(model, l, sets, rng.uniform(-1, 1, n), N)
    z = rng.normal(size=N)
    g = grad(z)
    h = 1e-5
    fd = np.array([(fun(z + h * e) - fun(z - h * e)) / (2 * h) for e in np.eye(N)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.booleans())
def test_exact_one_step_path_matches_numeric_path(seed, boxed, state_box):
    # a terminal weight equal to Q is the same problem but takes the iterative path
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model, l, sets = _random_lq(rng, n, boxed, state_box)
    x = rng.uniform(-1, 1, n)
    exact = solve_horizon(model, l, sets, x, 1)
    numeric = solve_horizon(model, l, sets, x, 1, terminal=TerminalWeight(P=l.Q))
    assert exact.status == numeric.status
    if exact.optimal:
        assert exact.J == pytest.approx(numeric.J, abs=1e-9)
        np.testing.assert_allclose(exact.U, numeric.U, atol=1e-6)
