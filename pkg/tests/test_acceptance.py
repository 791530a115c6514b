"""Acceptance criteria 1 to 10.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (visible even with
output capture on) and then asserts the criterion at its stated tolerance.
"""
import functools
import json
import time

import numpy as np
import pytest

from cmdpbounds import cli, harness
from cmdpbounds.bounds import concavity_lower_bound, duality_upper_bound
from cmdpbounds.cmdp import minimal_regret
from cmdpbounds.environments import (PendulumConfig, RandomCmdpConfig, build_pendulum_cmdp,
                                     generate_random_cmdp)
from cmdpbounds.lp import extract_policy, solve_cmdp
from cmdpbounds.regret import (UncertaintySet, build_regret_polytope, min_regret_hpolytope,
                               min_regret_vertices)

from oracles import value_iteration

REDUCED = {"n_theta_bins": 21, "n_thetadot_bins": 21}
TABLE2_SEEDS = list(range(20))


@pytest.fixture
def report_line(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


@pytest.fixture(scope="module")
def table2_report():
    cfg = {"experiment_id": "table2",
           "instances": {"kind": "random", "seeds": TABLE2_SEEDS,
                         "config": {"n_states": 20, "n_actions": 3, "n_constraints": 2, "gamma": 0.9}},
           "samples_per_bin": 15, "methods": ["duality", "perturbation", "concavity"],
           "lower_bounds": True, "backend": "simplex", "seed": 0}
    return harness.bounds_sweep(cfg)


@pytest.fixture(scope="module")
def pendulum():
    return build_pendulum_cmdp(PendulumConfig(**REDUCED))


def _medians(report, direction="upper"):
    return {(m["method"], m["tv_bin"]): m["median_looseness_pct"]
            for m in report.summary["medians"] if m["direction"] == direction}


def test_criterion_1_soundness_sandwich(table2_report, report_line):
    bad, checked = [], 0
    for r in table2_report.rows:
        if r["status"] != "ok":
            continue
        checked += 1
        if r["direction"] == "upper" and r["bound_value"] < r["true_value"] - 1e-6:
            bad.append(r)
        if r["direction"] == "lower" and r["bound_value"] > r["true_value"] + 1e-6:
            bad.append(r)
    n_rows = len(table2_report.rows)
    ok = not bad and checked == n_rows
    report_line(1, ok, f"{checked}/{n_rows} certificates checked, {len(bad)} violations")
    assert checked == n_rows
    assert not bad


def test_criterion_2_table2_ordering(table2_report, report_line):
    med = _medians(table2_report)
    bins = sorted({b for _, b in med})
    parts, ok = [], True
    for b in bins:
        d, p, c = med[("duality", b)], med[("perturbation", b)], med[("concavity", b)]
        bin_ok = d < p < c and d < 1.0
        ok &= bin_ok
        parts.append(f"[{b}] duality={d:.4g} perturbation={p:.4g} concavity={c:.4g} "
                     f"{'ok' if bin_ok else 'ordering violated'}")
    report_line(2, ok, "; ".join(parts))
    for b in bins:
        assert med[("duality", b)] < 1.0
        assert med[("duality", b)] < med[("perturbation", b)] < med[("concavity", b)]


def test_criterion_3_duality_tight_at_nominal(report_line):
    worst = 0.0
    for seed in TABLE2_SEEDS:
        cmdp = generate_random_cmdp(RandomCmdpConfig(seed=seed))
        sol = solve_cmdp(cmdp)
        gap = duality_upper_bound(sol, cmdp.nominal_beta).value - sol.value
        worst = max(worst, gap / (1e-7 * (1 + abs(sol.value))))
    ok = worst <= 1.0
    report_line(3, ok, f"max gap / (1e-7 (1+|V*|)) = {worst:.3g} over 20 instances")
    assert ok


def test_criterion_4_oracle_equivalence(report_line):
    worst_vi = worst_conc = 0.0
    for seed in range(10):
        cmdp = generate_random_cmdp(RandomCmdpConfig(n_constraints=0, seed=seed))
        V, _ = value_iteration(cmdp, tol=1e-10)
        sol = solve_cmdp(cmdp)
        worst_vi = max(worst_vi, abs(sol.value - cmdp.nominal_beta @ V))
        beta1 = np.random.default_rng(seed).dirichlet(np.ones(cmdp.n_states))
        truth = solve_cmdp(cmdp, beta1).value
        worst_conc = max(worst_conc, abs(concavity_lower_bound(cmdp, beta1).value - truth))
    ok = worst_vi <= 1e-6 and worst_conc <= 1e-6
    report_line(4, ok, f"max |LP - value iteration| = {worst_vi:.2e}, "
                       f"max |concavity lower - V*| = {worst_conc:.2e}")
    assert ok


def _feasible_vertices(cmdp, pi, anchor, count, rng):
    from cmdpbounds.cmdp import evaluate_policy

    v_c = np.array([evaluate_policy(cmdp, pi, k).values for k in range(cmdp.n_constraints)])
    out = []
    while len(out) < count:
        q = rng.dirichlet(np.full(cmdp.n_states, 0.3))
        if np.all(v_c @ q >= cmdp.thresholds):
            out.append(0.6 * anchor + 0.4 * q)
    return np.array(out)


def _hull_h_form(V):
    from scipy.spatial import ConvexHull

    n = V.shape[1]
    hull = ConvexHull(V[:, :-1])
    A, b = hull.equations[:, :-1], -hull.equations[:, -1]
    H = np.vstack([np.hstack([A, np.zeros((A.shape[0], 1))]), np.ones((1, n)), -np.ones((1, n))])
    return H, np.concatenate([b, [1.0, -1.0]])


def test_criterion_5_vertex_h_cross_check(report_line):
    cmdp = generate_random_cmdp(RandomCmdpConfig(n_states=6, seed=2))
    nominal = solve_cmdp(cmdp)
    pi = extract_policy(nominal, cmdp)
    rng = np.random.default_rng(0)
    diffs = []
    for _ in range(10):
        V = _feasible_vertices(cmdp, pi, cmdp.nominal_beta, int(rng.integers(8, 15)), rng)
        H, h = _hull_h_form(V)
        ev = min_regret_vertices(cmdp, pi, nominal, V)
        eh = min_regret_hpolytope(cmdp, pi, nominal, UncertaintySet.from_halfspaces(H, h))
        diffs.append(abs(ev - eh))
    ok = max(diffs) <= 1e-6
    report_line(5, ok, f"10 polytopes, max |V-form - H-form| = {max(diffs):.2e}")
    assert ok


def test_criterion_6_inner_approximation_soundness(pendulum, report_line):
    t0 = time.perf_counter()
    nominal = solve_cmdp(pendulum, backend="highs")
    pi = extract_policy(nominal, pendulum)
    poly = build_regret_polytope(pendulum, pi, nominal, 0.01)
    rng = np.random.default_rng(0)
    members = []
    for _ in range(50):
        B = rng.dirichlet(np.ones(pendulum.n_states), size=2000)
        members.extend(B[poly.contains(B)])
        if len(members) >= 50:
            break
    members = members[:50]
    solver = functools.partial(solve_cmdp, backend="highs")
    worst_eps, worst_delta = -np.inf, 0.0
    for beta in members:
        pair = minimal_regret(pendulum, pi, beta, solver=solver)
        worst_eps = max(worst_eps, pair.epsilon)
        worst_delta = max(worst_delta, float(np.max(pair.delta)))
    elapsed = time.perf_counter() - t0
    ok = len(members) == 50 and worst_eps <= 0.01 + 1e-6 and worst_delta <= 1e-9
    report_line(6, ok, f"{len(members)} members, max eps* = {worst_eps:.4g}, "
                       f"max delta* = {worst_delta:.2e}, {elapsed:.1f}s")
    assert len(members) == 50
    assert worst_eps <= 0.01 + 1e-6 and worst_delta <= 1e-9


def test_criterion_7_pendulum_sanity(pendulum, report_line):
    r_lo, r_hi = float(pendulum.reward.min()), float(pendulum.reward.max())
    cfg = {"experiment_id": "table3", "instances": {"kind": "pendulum", "config": REDUCED},
           "samples_per_bin": 15, "methods": ["duality", "perturbation"], "backend": "highs",
           "seed": 0}
    med = _medians(harness.bounds_sweep(cfg))
    bins = sorted({b for _, b in med})
    in_range = r_lo >= -16.27 and r_hi <= 0.0
    order = all(med[("duality", b)] is not None and med[("perturbation", b)] is not None
                and med[("duality", b)] < med[("perturbation", b)] for b in bins)
    detail = "; ".join(f"[{b}] duality={med[('duality', b)]:.3g} perturbation={med[('perturbation', b)]:.4g}"
                       for b in bins)
    report_line(7, in_range and order, f"rewards in [{r_lo:.3f}, {r_hi:.3f}]; {detail}")
    assert in_range and order


def test_criterion_8_bracketing(report_line):
    cfg = {"instance": {"kind": "pendulum", "config": REDUCED}, "policy_from": "top",
           "uncertainty_set": {"search": {"n_vertices": 3, "epsilon": 0.01, "max_tries": 200}},
           "n_samples": 100, "backend": "highs", "seed": 0}
    lower, upper = harness.min_regret(cfg).summary["bracket"]
    ok = (np.isfinite(lower) and np.isfinite(upper) and lower >= 0 and upper >= 0
          and lower <= upper + 1e-9)
    report_line(8, ok, f"bracket [{lower:.4g}, {upper:.4g}]")
    assert ok


def test_criterion_9_speedup(report_line):
    cfg = {"instance": {"kind": "pendulum", "config": REDUCED},
           "distributions": ["top", "bottom", "uniform"], "epsilon": 0.01, "n_samples": 100,
           "true_set": True, "backend": "highs", "seed": 0}
    rows = harness.regret_set(cfg).rows
    inner = sum(r["inner_wall_time_s"] for r in rows)
    true = sum(r["true_wall_time_s"] for r in rows)
    per = ", ".join(f"{r['distribution']}: inner {r['inner_hit_rate']:.2f} in {r['inner_wall_time_s']:.3f}s"
                    f" / true {r['true_hit_rate']:.2f} in {r['true_wall_time_s']:.2f}s" for r in rows)
    ratio = true / inner
    ok = ratio >= 100
    report_line(9, ok, f"speedup {ratio:.0f}x ({per})")
    assert ok


def test_criterion_10_determinism(tmp_path, report_line):
    cfg = {"experiment_id": "det", "instances": {"kind": "random", "seeds": [0, 1, 2], "config": {}},
           "samples_per_bin": 4}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["bounds-sweep", "--config", str(path), "--out", str(out), "--seed", "7"]) == 0
        outs.append(harness.read_report_csv(out / "report.csv"))
    strip = [[{k: v for k, v in row.items() if k not in harness.TIMING_COLUMNS} for row in rows]
             for _, rows in outs]
    ok = strip[0] == strip[1] and len(strip[0]) > 0
    report_line(10, ok, f"{len(strip[0])} rows compared, identical={strip[0] == strip[1]}")
    assert ok
