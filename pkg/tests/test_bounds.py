import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdpbounds.bounds import (BoundCertificate, assemble_r_matrix, build_perturbation_context,
                               concavity_lower_bound, concavity_upper_bound, concavity_values,
                               duality_upper_bound, partition_columns, perturbation_bounds,
                               relative_looseness)
from cmdpbounds.environments import RandomCmdpConfig, generate_random_cmdp
from cmdpbounds.exceptions import DegenerateBasis, InfeasibleVertex, NotOptimal, ZeroTrueValue
from cmdpbounds.lp import build_lp, solve_cmdp

from oracles import make_cmdp, scalar_cmdp, value_iteration

TOL = 1e-6


def test_duality_tight_at_nominal(small_cmdp):
    sol = solve_cmdp(small_cmdp)
    cert = duality_upper_bound(sol, small_cmdp.nominal_beta)
    assert cert.value - sol.value <= 1e-7 * (1 + abs(sol.value))
    assert cert.method == "duality" and cert.direction == "upper"


def test_duality_unconstrained_dominates_optimal_values(unconstrained_cmdp):
    sol = solve_cmdp(unconstrained_cmdp)
    V, _ = value_iteration(unconstrained_cmdp)
    assert np.all(sol.w >= V - 1e-7)
    beta1 = np.random.default_rng(0).dirichlet(np.ones(unconstrained_cmdp.n_states))
    assert duality_upper_bound(sol, beta1).value >= beta1 @ V - TOL


def test_duality_needs_optimal_solution(small_cmdp):
    bad = solve_cmdp(small_cmdp, thresholds_override=small_cmdp.thresholds + 100)
    with pytest.raises(NotOptimal):
        duality_upper_bound(bad, small_cmdp.nominal_beta)


def test_delta_relaxes_duality_bound(small_cmdp):
    sol = solve_cmdp(small_cmdp)
    beta1 = np.random.default_rng(3).dirichlet(np.ones(small_cmdp.n_states))
    d = np.array([0.2, 0.1])
    cert = duality_upper_bound(sol, beta1, d)
    relaxed = solve_cmdp(small_cmdp, beta1, small_cmdp.thresholds - d)
    assert cert.value >= relaxed.value - TOL


def test_scalar_r_matrix():
    cmdp = scalar_cmdp()
    sol = solve_cmdp(cmdp)
    _, M, _ = build_lp(cmdp).standard_form()
    R = assemble_r_matrix(M, partition_columns(sol))
    np.testing.assert_allclose(R, np.diag([0.5, 0.5]))
    ctx = build_perturbation_context(cmdp, sol)
    assert ctx.r_inv_norm == pytest.approx(2.0)
    up, lo = perturbation_bounds(ctx, [1.0], [1.0])
    assert up.value == pytest.approx(2.0) and lo.value == pytest.approx(2.0)


def test_r1_square_on_random_instance(random20):
    sol = solve_cmdp(random20)
    ctx = build_perturbation_context(random20, sol)
    assert ctx.basic_columns.size == random20.n_states + random20.n_constraints


def test_degenerate_instance_detected():
    # state 1 is unreachable from state 0 and has no start mass: zero occupancy there
    T = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    cmdp = make_cmdp(T, [[1.0], [1.0]], gamma=0.5, beta0=[1.0, 0.0])
    with pytest.raises(DegenerateBasis):
        build_perturbation_context(cmdp, solve_cmdp(cmdp))


def test_perturbation_collapses_at_nominal(random20):
    sol = solve_cmdp(random20)
    ctx = build_perturbation_context(random20, sol)
    up, lo = perturbation_bounds(ctx, sol.beta, sol.beta)
    assert up.value == pytest.approx(sol.value) and lo.value == pytest.approx(sol.value)


def test_perturbation_delta_gives_upper_only(random20):
    sol = solve_cmdp(random20)
    ctx = build_perturbation_context(random20, sol)
    beta1 = np.random.default_rng(1).dirichlet(np.ones(20))
    d = np.array([0.5, 0.5])
    up, lo = perturbation_bounds(ctx, sol.beta, beta1, d)
    assert lo is None
    relaxed = solve_cmdp(random20, beta1, random20.thresholds - d)
    assert up.value >= relaxed.value - TOL


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_soundness_sandwich_property(seed):
    cmdp_rng = np.random.default_rng(seed)
    cmdp = generate_random_cmdp(RandomCmdpConfig(n_states=6, seed=seed))
    sol = solve_cmdp(cmdp)
    if sol.status != "optimal":
        return
    beta1 = cmdp_rng.dirichlet(np.full(6, 0.5))
    truth = solve_cmdp(cmdp, beta1)
    if truth.status != "optimal":
        return
    v = truth.value
    assert duality_upper_bound(sol, beta1).value >= v - TOL
    try:
        ctx = build_perturbation_context(cmdp, sol)
    except DegenerateBasis:
        ctx = None
    if ctx is not None:
        up, lo = perturbation_bounds(ctx, sol.beta, beta1)
        assert up.value >= v - TOL and lo.value <= v + TOL
    vals = concavity_values(cmdp)
    if vals.uniform_feasible and vals.vertex_feasible.all():
        assert concavity_upper_bound(cmdp, beta1, values=vals).value >= v - TOL
        assert concavity_lower_bound(cmdp, beta1, values=vals).value <= v + TOL


def test_concavity_exact_at_uniform_and_vertices(small_cmdp):
    vals = concavity_values(small_cmdp)
    n = small_cmdp.n_states
    uni = np.full(n, 1.0 / n)
    assert concavity_upper_bound(small_cmdp, uni, values=vals).value == pytest.approx(vals.uniform_value)
    for k in range(n):
        e = np.eye(n)[k]
        assert concavity_lower_bound(small_cmdp, e, values=vals).value == pytest.approx(vals.vertex_values[k])
        assert concavity_upper_bound(small_cmdp, e, values=vals).value >= vals.vertex_values[k] - TOL


def test_concavity_lower_exact_when_unconstrained(unconstrained_cmdp):
    V, _ = value_iteration(unconstrained_cmdp)
    beta1 = np.random.default_rng(5).dirichlet(np.ones(unconstrained_cmdp.n_states))
    assert concavity_lower_bound(unconstrained_cmdp, beta1).value == pytest.approx(beta1 @ V, abs=1e-6)


def test_concavity_values_cached(small_cmdp):
    assert concavity_values(small_cmdp) is concavity_values(small_cmdp)


def test_infeasible_vertex_reported():
    # two absorbing states; only state 0 yields utility, so starting in state 1 is infeasible
    T = np.array([np.eye(2)])
    cmdp = make_cmdp(T, [[0.0], [1.0]], c=[[[1.0], [0.0]]], tau=[1.0], gamma=0.5)
    with pytest.raises(InfeasibleVertex):
        concavity_upper_bound(cmdp, [0.5, 0.5])
    with pytest.raises(InfeasibleVertex):
        concavity_lower_bound(cmdp, [0.7, 0.3])
    # a start supported on the feasible vertex only is fine
    assert concavity_lower_bound(cmdp, [1.0, 0.0]).value == pytest.approx(0.0)


def test_relative_looseness():
    assert relative_looseness(2.0, 2.0) == 0.0
    assert relative_looseness(-10.0, -9.0) == pytest.approx(10.0)
    with pytest.raises(ZeroTrueValue):
        relative_looseness(0.0, 2.0)


def test_certificate_round_trip(small_cmdp):
    sol = solve_cmdp(small_cmdp)
    cert = duality_upper_bound(sol, small_cmdp.nominal_beta)
    back = BoundCertificate.from_dict(cert.to_dict())
    assert back.value == cert.value and back.method == "duality"
    np.testing.assert_array_equal(back.nominal_beta, cert.nominal_beta)
