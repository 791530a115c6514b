import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdpbounds.cmdp import (Policy, evaluate_policy, load_cmdp, minimal_regret, payoff_matrix,
                             policy_value, save_cmdp, validate_cmdp)
from cmdpbounds.exceptions import BadDiscount, BadDistribution, DimensionMismatch, NotStochastic
from cmdpbounds.lp import extract_policy, solve_cmdp

from oracles import make_cmdp, scalar_cmdp, two_state_cycle, value_iteration


def test_scalar_instance_is_valid():
    cmdp = scalar_cmdp()
    assert (cmdp.n_states, cmdp.n_actions, cmdp.n_constraints) == (1, 1, 0)
    np.testing.assert_array_equal(cmdp.nominal_beta, [1.0])


def test_column_sum_below_one_rejected():
    T = [[[0.9, 0.0], [0.0, 1.0]]]
    with pytest.raises(NotStochastic):
        make_cmdp(T, [[1.0], [0.0]])


def test_tiny_drift_is_renormalized():
    T = np.array([[[0.5 + 1e-12, 0.5], [0.5, 0.5]]])
    cmdp = make_cmdp(T, [[1.0], [0.0]])
    np.testing.assert_allclose(cmdp.transitions.sum(axis=1), 1.0, atol=1e-15)


def test_bad_discount_rejected():
    with pytest.raises(BadDiscount):
        scalar_cmdp(gamma=1.0)


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        make_cmdp([[[1.0]]], [[1.0, 2.0]])


def test_threshold_length_checked():
    with pytest.raises(DimensionMismatch):
        make_cmdp([[[1.0]]], [[1.0]], c=[[[1.0]]], tau=[1.0, 2.0])


def test_bad_start_distribution_rejected():
    with pytest.raises(BadDistribution):
        make_cmdp([[[1.0]]], [[1.0]], beta0=[0.5])


def test_json_round_trip(tmp_path, small_cmdp):
    path = tmp_path / "inst.json"
    save_cmdp(small_cmdp, path)
    back = load_cmdp(path)
    np.testing.assert_array_equal(back.transitions, small_cmdp.transitions)
    np.testing.assert_array_equal(back.constraint_utils, small_cmdp.constraint_utils)
    np.testing.assert_array_equal(back.thresholds, small_cmdp.thresholds)
    assert back.meta["env"] == "random"
    assert set(json.loads(path.read_text())) >= {"n_states", "n_actions", "gamma", "transitions",
                                                 "reward", "constraints", "thresholds", "beta0"}


def test_scalar_value_is_geometric_series():
    cmdp = scalar_cmdp()
    v = evaluate_policy(cmdp, Policy([[1.0]]))
    np.testing.assert_allclose(v.values, [2.0], atol=1e-12)


def test_two_state_cycle_values():
    cmdp = two_state_cycle()
    pi = Policy([[1.0], [1.0]])
    np.testing.assert_allclose(evaluate_policy(cmdp, pi).values, [4 / 3, 2 / 3], atol=1e-12)
    assert policy_value(cmdp, pi, "reward", [0.5, 0.5]) == pytest.approx(1.0, abs=1e-12)
    assert policy_value(cmdp, pi, "reward", [0.0, 1.0]) == pytest.approx(2 / 3, abs=1e-12)


def test_zero_payoff_gives_zero(small_cmdp):
    pi = Policy.uniform(small_cmdp.n_states, small_cmdp.n_actions)
    zero = np.zeros((small_cmdp.n_states, small_cmdp.n_actions))
    np.testing.assert_array_equal(evaluate_policy(small_cmdp, pi, zero).values, 0.0)


def test_payoff_selector(small_cmdp):
    m, kind = payoff_matrix(small_cmdp, 1)
    np.testing.assert_array_equal(m, small_cmdp.constraint_utils[1])
    with pytest.raises(IndexError):
        payoff_matrix(small_cmdp, 5)


def test_policy_rows_validated():
    with pytest.raises(BadDistribution):
        Policy([[0.6, 0.6]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 3),
       st.floats(0.0, 0.95))
def test_evaluation_satisfies_bellman_equation(seed, n, a, gamma):
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.ones(n), size=(a, n)).transpose(0, 2, 1)
    r = rng.uniform(-1, 1, size=(n, a))
    cmdp = make_cmdp(T, r, gamma=gamma)
    pi = Policy(rng.dirichlet(np.ones(a), size=n))
    V = evaluate_policy(cmdp, pi).values
    r_pi = (pi.probs * r).sum(axis=1)
    P = np.einsum("sa,ats->st", pi.probs, T)
    np.testing.assert_allclose(V, r_pi + gamma * P @ V, atol=1e-9)


def test_minimal_regret_zero_for_optimal_policy(small_cmdp):
    sol = solve_cmdp(small_cmdp)
    pi = extract_policy(sol, small_cmdp)
    pair = minimal_regret(small_cmdp, pi, small_cmdp.nominal_beta)
    assert np.all(np.abs(pair.delta) < 1e-6)
    assert abs(pair.epsilon) < 1e-6


def test_minimal_regret_zero_for_greedy_policy_unconstrained(unconstrained_cmdp):
    _, greedy = value_iteration(unconstrained_cmdp)
    pi = Policy.deterministic(greedy, unconstrained_cmdp.n_actions)
    pair = minimal_regret(unconstrained_cmdp, pi, unconstrained_cmdp.nominal_beta)
    assert abs(pair.epsilon) < 1e-6


def test_minimal_regret_reports_constraint_violation():
    # single state, single action, utility 1 at gamma 1/2 gives V_c = 2; threshold 2.3
    cmdp = make_cmdp([[[1.0]]], [[1.0]], c=[[[1.0]]], tau=[2.3], gamma=0.5)
    pair = minimal_regret(cmdp, Policy([[1.0]]), [1.0])
    assert pair.delta[0] == pytest.approx(0.3, abs=1e-9)
    assert pair.epsilon == pytest.approx(0.0, abs=1e-9)


def test_validate_accepts_field_names():
    cmdp = validate_cmdp({"transitions": [[[1.0]]], "reward": [[1.0]], "discount": 0.5,
                          "nominal_beta": [1.0]})
    assert cmdp.discount == 0.5
