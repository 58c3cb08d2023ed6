import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcstab import (ArgumentError, ConfigError, Constraints, InputBox, LinearModel, QuadraticCost,
                     TerminalWeight, solve_horizon, solve_lq_horizon)
from mpcstab.stability import (TAU_CERT, Certificate, HorizonForms, check_classic, check_thm1,
                               check_thm2, check_thm_tw, first_order_region, form_is_psd,
                               lq_horizon_forms, lq_n1_certificate, require_definite,
                               write_certificates)

from conftest import AGENT_A, AGENT_B, scalar_problem

REWEIGHTED = np.diag([1.0, 0.25])


def test_verdict_tolerance():
    assert Certificate("thm1", 1.0 + 0.5 * TAU_CERT, 1.0).verdict
    assert not Certificate("thm1", 1.0 + 2 * TAU_CERT, 1.0).verdict
    assert not Certificate("thm1", 1.0, 1.05, delta=0.1).verdict
    c = Certificate("thm1", np.inf, 1.0, infeasible=True)
    assert not c.verdict and c.margin == -np.inf


def test_certificate_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_certificates(path, [Certificate("thm1", 0.5, 1.0, k=3), Certificate("classic", 1.0, 0.0)])
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["kind", "k", "lhs", "rhs", "margin", "verdict"]
    assert rows[0]["k"] == "3" and rows[0]["verdict"] == "1"
    assert rows[1]["k"] == "" and rows[1]["verdict"] == "0"


# -- no-terminal-weight and terminal-set checks ------------------------------------


def test_thm1_reweighted_agent_passes(agent, free2):
    l = QuadraticCost(REWEIGHTED, np.zeros((1, 1)))
    sol = solve_horizon(agent, l, free2, [1, 1], 1)
    assert check_thm1(sol, agent, l, free2).verdict


def test_thm1_original_agent_fails_somewhere(agent, agent_cost, free2):
    # the plain one-step loop is unstable, so the certificate cannot hold everywhere
    rng = np.random.default_rng(0)
    verdicts = [check_thm1(solve_horizon(agent, agent_cost, free2, x, 1), agent, agent_cost,
                           free2).verdict for x in rng.normal(size=(50, 2))]
    assert not all(verdicts)


def test_thm1_origin(agent, agent_cost, free2):
    c = check_thm1(solve_horizon(agent, agent_cost, free2, [0, 0], 2), agent, agent_cost, free2)
    assert c.margin == 0 and c.verdict


def test_thm1_needs_optimal_solution(agent, agent_cost, free2):
    sol = dataclasses.replace(solve_horizon(agent, agent_cost, free2, [1, 1], 1), status="infeasible")
    with pytest.raises(ArgumentError):
        check_thm1(sol, agent, agent_cost, free2)
    with pytest.raises(ArgumentError):
        check_thm2([1, 1], sol, agent, agent_cost, free2)


def test_thm2_agent_horizon_two_sampled(agent, agent_cost, free2):
    rng = np.random.default_rng(1)
    for x in rng.uniform(-3, 3, (40, 2)):
        sol = solve_horizon(agent, agent_cost, free2, x, 2)
        assert check_thm2(x, sol, agent, agent_cost, free2).verdict


@pytest.mark.parametrize("a,b,q,r", [(2, 1, 1, 1), (3, 1, 4, 1), (0.5, -1, 1, 2)])
def test_thm2_scalar_margin_formula(a, b, q, r, free1):
    model, l = scalar_problem(a, b, q, r)
    M = a * a * q * r / (r + b * b * q)
    pole = a * r / (r + b * b * q)
    for x in (0.3, -1.7):
        sol = solve_horizon(model, l, free1, [x], 1)
        c = check_thm2([x], sol, model, l, free1)
        assert c.margin == pytest.approx(M * (1 - pole ** 2) * x * x, abs=1e-8)
        assert c.verdict == (abs(pole) <= 1)


# -- terminal weight ------------------------------------------------------------------


def test_thm_tw_reduces_to_thm1(agent, agent_cost, free2):
    lT = TerminalWeight(P=np.eye(2))
    for x in ([1, 1], [0.3, -2.0]):
        sol = solve_horizon(agent, agent_cost, free2, x, 2, terminal=lT)
        tw = check_thm_tw(sol, agent, agent_cost, lT, free2)
        t1 = check_thm1(sol, agent, agent_cost, free2)
        assert tw.lhs == pytest.approx(t1.lhs, abs=1e-12)
        assert tw.rhs == pytest.approx(t1.rhs, abs=1e-12)
        assert tw.verdict == t1.verdict


def test_thm_tw_rejects_horizon_one(agent, agent_cost, free2):
    lT = TerminalWeight(P=np.eye(2))
    sol = solve_horizon(agent, agent_cost, free2, [1, 1], 1, terminal=lT)
    with pytest.raises(ArgumentError):
        check_thm_tw(sol, agent, agent_cost, lT, free2)


def test_thm_tw_origin(agent, agent_cost, free2):
    lT = TerminalWeight(P=3 * np.eye(2))
    sol = solve_horizon(agent, agent_cost, free2, [0, 0], 2, terminal=lT)
    c = check_thm_tw(sol, agent, agent_cost, lT, free2)
    assert c.margin == 0 and c.verdict


def test_thm_tw_with_descent_weight(free1):
    # p = 2x^2 satisfies the descent property for a = 0.5, b = 1, q = 1, r = 0 with u = 0
    model, l = scalar_problem(0.5, 1, 1, 0.1)
    lT = TerminalWeight(P=[[2.0]])
    sol = solve_horizon(model, l, free1, [1.0], 2, terminal=lT)
    assert check_thm_tw(sol, model, l, lT, free1).verdict


# -- classic descent -------------------------------------------------------------------


def test_classic_examples(free1):
    model, l = scalar_problem(0.5, 1, 1, 0)
    c = check_classic(model, l, TerminalWeight(P=[[2.0]]), free1, [1.0], [0.0])
    assert c.lhs == pytest.approx(-0.5) and c.verdict
    c0 = check_classic(model, l, TerminalWeight(P=[[2.0]]), free1, [0.0], [0.0])
    assert c0.lhs == 0 and c0.verdict
    stuck, lq = scalar_problem(2, 0, 1, 0)
    c = check_classic(stuck, lq, TerminalWeight(P=[[1.0]]), free1, [1.0], [0.0])
    assert c.lhs == pytest.approx(4.0) and not c.verdict


def test_classic_rejects_control_outside_box():
    model, l = scalar_problem(0.5, 1, 1, 0)
    sets = Constraints(InputBox([0.5]), Constraints.unconstrained(1, 1).states)
    with pytest.raises(ArgumentError):
        check_classic(model, l, TerminalWeight(P=[[1.0]]), sets, [1.0], [0.7])


# -- first-order region ------------------------------------------------------------------


def test_first_order_examples():
    r = first_order_region(2, 1, 1, 1)
    assert r.closed_loop_pole == 1.0 and not r.new and not r.prior
    r = first_order_region(3, 1, 4, 1)
    assert r.closed_loop_pole == pytest.approx(0.6) and r.new and not r.prior
    r = first_order_region(0.9, 1, 1, 1)
    assert r.closed_loop_pole == pytest.approx(0.45) and r.new and r.prior


@settings(max_examples=200)
@given(st.floats(-0.99, 0.99), st.floats(-2, 2), st.floats(0.1, 10), st.floats(0, 10))
def test_stable_plants_pass_both(a, b, q, r):
    if b * b * q + r == 0:
        return
    reg = first_order_region(a, b, q, r)
    assert reg.new and reg.prior


@settings(max_examples=200)
@given(st.floats(-4, 4), st.floats(0.1, 2), st.floats(0.1, 10), st.floats(0, 10))
def test_prior_implies_new(a, b, q, r):
    reg = first_order_region(a, b, q, r)
    assert reg.new == (abs(reg.closed_loop_pole) < 1)
    if reg.prior and abs(a) >= 1:
        assert reg.new


def test_first_order_degenerate():
    with pytest.raises(ArgumentError):
        first_order_region(1.5, 0, 1, 0)
    with pytest.raises(ArgumentError):
        first_order_region(1.5, 1, 0, 1)


# -- LQ closed forms -----------------------------------------------------------------------


def test_lq_n1_certificate_examples():
    assert lq_n1_certificate(AGENT_A, AGENT_B, REWEIGHTED).verdict
    assert not lq_n1_certificate(AGENT_A, AGENT_B, np.eye(2)).verdict
    assert lq_n1_certificate(np.zeros((2, 2)), AGENT_B, np.eye(2)).verdict


def test_original_agent_closed_loop_is_unstable():
    K = np.array([[-0.16, 0.22]]) / 0.89
    rho = np.abs(np.linalg.eigvals(AGENT_A + AGENT_B @ K)).max()
    assert rho == pytest.approx(1.033, abs=1e-3)


def test_horizon_forms_match_sampled_certificates(agent, agent_cost, free2):
    forms = lq_horizon_forms(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), 2)
    rng = np.random.default_rng(2)
    for x in rng.uniform(-2, 2, (30, 2)):
        sol = solve_lq_horizon(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), x, 2)
        assert check_thm1(sol, agent, agent_cost, free2).margin == pytest.approx(
            x @ forms.thm1 @ x, abs=1e-9)
        assert check_thm2(x, sol, agent, agent_cost, free2).margin == pytest.approx(
            x @ forms.thm2 @ x, abs=1e-9)


def test_horizon_two_thm2_form_is_psd():
    forms = lq_horizon_forms(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), 2)
    assert form_is_psd(forms.thm2)
    s11, s12, s22 = HorizonForms.coefficients(forms.thm2)
    assert s11 == pytest.approx(0.415, abs=5e-3)
    assert s12 == pytest.approx(0.444, abs=5e-3)
    assert s22 == pytest.approx(0.119, abs=5e-3)


def test_horizon_one_forms_agree_with_lq_n1():
    forms = lq_horizon_forms(AGENT_A, AGENT_B, REWEIGHTED, np.zeros((1, 1)), 1)
    assert form_is_psd(forms.thm2) == lq_n1_certificate(AGENT_A, AGENT_B, REWEIGHTED).verdict


def test_require_definite():
    require_definite(QuadraticCost(np.eye(2), np.zeros((1, 1))))
    with pytest.raises(ConfigError):
        require_definite(QuadraticCost(np.diag([1.0, 0.0]), np.zeros((1, 1))))


# -- identities -----------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tw_identity_random(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    model = LinearModel(rng.uniform(-1.5, 1.5, (n, n)), rng.uniform(0.2, 1, (n, 1)))
    l = QuadraticCost(np.diag(rng.uniform(0.2, 2, n)), [[rng.uniform(0, 1)]])
    sets = Constraints.unconstrained(n, 1)
    lT = TerminalWeight(P=l.Q)
    x = rng.uniform(-1, 1, n)
    sol = solve_horizon(model, l, sets, x, 2 + seed % 2, terminal=lT)
    assert check_thm_tw(sol, model, l, lT, sets).margin == pytest.approx(
        check_thm1(sol, model, l, sets).margin, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shifted_sequence_feasible_and_bounds_next_value(seed):
    # when the no-terminal-weight check passes, dropping the first move and appending the
    # one-step minimiser at the terminal state is admissible from x(k+1), and its
    # cost J - l(x1, u0) + m(xN) upper-bounds the next optimal value
    from mpcstab import StateSet, horizon_cost, one_step_value

    rng = np.random.default_rng(seed)
    model = LinearModel(rng.uniform(-1.2, 1.2, (2, 2)), rng.uniform(-1, 1, (2, 1)) + 0.3)
    l = QuadraticCost(np.diag(rng.uniform(0.2, 2, 2)), [[rng.uniform(0.05, 1)]])
    sets = Constraints(InputBox([rng.uniform(0.3, 2)]), StateSet.box([-3, -3], [3, 3]))
    x0 = rng.uniform(-1, 1, 2)
    sol = solve_horizon(model, l, sets, x0, 2)
    if not sol.optimal:
        return
    cert = check_thm1(sol, model, l, sets)
    if not cert.verdict:
        return
    tail = one_step_value(model, l, sets, sol.X[-1])
    U = np.vstack([sol.U[1:], tail.u_star.reshape(1, -1)])
    x1 = sol.X[0]
    X, x = [], x1
    for u in U:
        assert sets.inputs.contains(u)
        x = model.step(x, u)
        assert sets.states.contains(x)
        X.append(x)
    shifted = horizon_cost(l, np.array(X), U)
    assert shifted == pytest.approx(sol.J - l(sol.X[0], sol.U[0]) + tail.m_val, abs=1e-7)
    nxt = solve_horizon(model, l, sets, x1, 2)
    assert nxt.J <= shifted + TAU_CERT
    assert nxt.J <= sol.J + TAU_CERT


def test_global_verdict_cross_checked_on_ten_thousand_states(agent, agent_cost, free2):
    # the matrix test decides the for-all-x certificate; sampling must not contradict it
    forms = lq_horizon_forms(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), 2)
    assert form_is_psd(forms.thm2)
    rng = np.random.default_rng(3)
    for x in rng.uniform(-2, 2, (10_000, 2)):
        sol = solve_lq_horizon(AGENT_A, AGENT_B, np.eye(2), np.zeros((1, 1)), x, 2)
        c = check_thm2(x, sol, agent, agent_cost, free2)
        assert c.verdict
        assert c.margin == pytest.approx(x @ forms.thm2 @ x, abs=1e-9)
