"""Experiment orchestration behind the command-line interface.

Every experiment takes a plain JSON-compatible config dict and returns an
:class:`ExperimentReport`.  Reports write ``report.csv`` (first line
``# schema=1``) and ``summary.json``.  Wall-time columns are kept apart
from the data columns so that two runs with the same config can be
compared row by row.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import (build_perturbation_context, concavity_lower_bound, concavity_upper_bound,
                     concavity_values, duality_upper_bound, perturbation_bounds, relative_looseness)
from .cmdp import Cmdp, evaluate_policy, load_cmdp, save_cmdp
from .environments import (PendulumConfig, RandomCmdpConfig, build_pendulum_cmdp,
                           generate_random_cmdp, named_distributions, sample_beta_in_tv_bin,
                           CONCENTRATION_SCHEDULE)
from .exceptions import (CmdpError, DegenerateBasis, InfeasibleVertex, NumericalFailure, SingularR,
                         ZeroTrueValue)
from .lp import extract_policy, solve_cmdp
from .regret import (UncertaintySet, build_regret_polytope, hit_rate,
                     min_regret_hpolytope, min_regret_sampled_lower, min_regret_vertices,
                     true_regret_oracle)

SCHEMA_VERSION = 1
DEFAULT_TV_BINS = ((0.25, 0.5), (0.5, 0.75), (0.75, 1.0))
LARGE_INSTANCE = 200  # above this many states: HiGHS backend, no concavity by default
BRACKET_TOL = 1e-9

SWEEP_COLUMNS = ["experiment_id", "instance_seed", "beta_index", "method", "direction", "tv_bin",
                 "true_value", "bound_value", "relative_looseness_pct", "status", "wall_time_s"]
TIMING_COLUMNS = {"wall_time_s", "inner_wall_time_s", "true_wall_time_s"}


@dataclass
class ExperimentReport:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    def data_rows(self) -> list:
        """Rows without the timing columns, for reproducibility checks."""
        keep = [c for c in self.columns if c not in TIMING_COLUMNS]
        return [[row[c] for c in keep] for row in self.rows]

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={SCHEMA_VERSION}\n")
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: _fmt(row[c]) for c in self.columns})
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.csv_text())
        (out / "summary.json").write_text(json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n")
        return out


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def read_report_csv(path) -> tuple[int, list[dict]]:
    """Parse a report written by :meth:`ExperimentReport.write`; returns ``(schema, rows)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError("missing schema header")
    schema = int(lines[0].split("=", 1)[1])
    return schema, list(csv.DictReader(lines[1:]))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(_jsonable(config), sort_keys=True).encode()).hexdigest()


def pick_backend(requested: str, n_states: int) -> str:
    if requested == "auto":
        return "highs" if n_states > LARGE_INSTANCE else "simplex"
    return requested


# ---------------------------------------------------------------- instances

def instance_specs(source: dict) -> list[dict]:
    """Expand an instance source into one picklable spec per CMDP."""
    kind = source.get("kind", "random")
    if kind == "random":
        seeds = source.get("seeds", list(range(20)))
        return [{"kind": "random", "seed": int(s), "config": dict(source.get("config", {}))} for s in seeds]
    if kind == "pendulum":
        cfg = dict(source.get("config", {}))
        return [{"kind": "pendulum", "seed": int(cfg.get("seed", 0)), "config": cfg}]
    if kind == "files":
        return [{"kind": "file", "seed": i, "path": str(p)} for i, p in enumerate(source["paths"])]
    raise ValueError(f"unknown instance kind {kind!r}")


def build_instance(spec: dict) -> Cmdp:
    if spec["kind"] == "random":
        return generate_random_cmdp(RandomCmdpConfig.from_dict({**spec["config"], "seed": spec["seed"]}))
    if spec["kind"] == "pendulum":
        return build_pendulum_cmdp(PendulumConfig.from_dict(spec["config"]))
    if spec["kind"] == "file":
        return load_cmdp(spec["path"])
    raise ValueError(f"unknown instance kind {spec['kind']!r}")


def _run_tasks(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------- bounds sweep

DEFAULT_SWEEP = {
    "experiment_id": "bounds_sweep",
    "instances": {"kind": "random", "seeds": list(range(20)), "config": {}},
    "tv_bins": [list(b) for b in DEFAULT_TV_BINS],
    "samples_per_bin": 15,
    "methods": ["duality", "perturbation", "concavity"],
    "lower_bounds": True,
    "backend": "auto",
    "force_concavity": False,
    "seed": 0,
}

_STATUS_OF = {DegenerateBasis: "degenerate", SingularR: "singular_r",
              InfeasibleVertex: "infeasible_vertex", NumericalFailure: "numerical_failure",
              ZeroTrueValue: "zero_true_value"}


def _status_of(exc: Exception) -> str:
    for cls, name in _STATUS_OF.items():
        if isinstance(exc, cls):
            return name
    return "error"


def _bin_label(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


def _sweep_instance(task: dict) -> list[dict]:
    cfg, spec = task["config"], task["spec"]
    cmdp = build_instance(spec)
    backend = pick_backend(cfg["backend"], cmdp.n_states)
    methods = list(cfg["methods"])
    if "concavity" in methods and cmdp.n_states > LARGE_INSTANCE and not cfg["force_concavity"]:
        methods.remove("concavity")
    seed = int(cfg["seed"])
    nominal = solve_cmdp(cmdp, cmdp.nominal_beta, backend=backend)
    base = {"experiment_id": cfg["experiment_id"], "instance_seed": spec["seed"]}

    setup_error: dict[str, str] = {}
    pert_ctx = conc_vals = None
    if nominal.status != "optimal":
        setup_error = {m: f"nominal_{nominal.status}" for m in methods}
    else:
        if "perturbation" in methods:
            try:
                pert_ctx = build_perturbation_context(cmdp, nominal)
            except CmdpError as exc:
                setup_error["perturbation"] = _status_of(exc)
        if "concavity" in methods:
            conc_vals = concavity_values(cmdp, None, backend=backend)

    rows = []
    beta_index = 0
    for b, (lo, hi) in enumerate(cfg["tv_bins"]):
        label = _bin_label(lo, hi)
        for j in range(int(cfg["samples_per_bin"])):
            beta1 = sample_beta_in_tv_bin(cmdp.n_states, lo, hi, cmdp.nominal_beta,
                                          rng_seed=[seed, int(spec["seed"]), b, j])
            truth_sol = solve_cmdp(cmdp, beta1, backend=backend)
            truth = truth_sol.value if truth_sol.status == "optimal" else float("nan")
            for method in methods:
                directions = ["upper"]
                if cfg["lower_bounds"] and method in ("perturbation", "concavity"):
                    directions.append("lower")
                t0 = time.perf_counter()
                values, status = {}, "ok"
                try:
                    if method in setup_error:
                        status = setup_error[method]
                    elif method == "duality":
                        values["upper"] = duality_upper_bound(nominal, beta1).value
                    elif method == "perturbation":
                        up, low = perturbation_bounds(pert_ctx, nominal.beta, beta1)
                        values["upper"], values["lower"] = up.value, low.value
                    elif method == "concavity":
                        values["upper"] = concavity_upper_bound(cmdp, beta1, values=conc_vals).value
                        if "lower" in directions:
                            values["lower"] = concavity_lower_bound(cmdp, beta1, values=conc_vals).value
                    else:
                        raise ValueError(f"unknown method {method!r}")
                except CmdpError as exc:
                    status = _status_of(exc)
                elapsed = (time.perf_counter() - t0) / len(directions)
                for direction in directions:
                    row_status = status
                    bound = values.get(direction, float("nan"))
                    loose = float("nan")
                    if row_status == "ok" and truth_sol.status != "optimal":
                        row_status = f"truth_{truth_sol.status}"
                    if row_status == "ok":
                        try:
                            loose = relative_looseness(truth, bound)
                        except ZeroTrueValue:
                            row_status = "zero_true_value"
                    rows.append({**base, "beta_index": beta_index, "method": method,
                                 "direction": direction, "tv_bin": label, "true_value": float(truth),
                                 "bound_value": float(bound), "relative_looseness_pct": loose,
                                 "status": row_status, "wall_time_s": elapsed})
            beta_index += 1
    return rows


def summarize_rows(rows: list[dict]) -> list[dict]:
    """Median looseness per (method, direction, tv_bin) over rows with status ``ok``."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["method"], r["direction"], r["tv_bin"]), []).append(r)
    out = []
    for (method, direction, label), rs in groups.items():
        ok = [float(r["relative_looseness_pct"]) for r in rs if r["status"] == "ok"]
        out.append({"method": method, "direction": direction, "tv_bin": label,
                    "median_looseness_pct": float(np.median(ok)) if ok else None,
                    "n_ok": len(ok), "n_failed": len(rs) - len(ok)})
    return out


def _merge(defaults: dict, config: Optional[dict]) -> dict:
    cfg = copy.deepcopy(defaults)
    cfg.update(copy.deepcopy(config or {}))
    return cfg


def bounds_sweep(config: Optional[dict] = None, jobs: int = 1) -> ExperimentReport:
    """Bound tightness against fresh solves at start distributions binned by TV distance."""
    cfg = _merge(DEFAULT_SWEEP, config)
    tasks = [{"config": cfg, "spec": spec} for spec in instance_specs(cfg["instances"])]
    rows = [r for chunk in _run_tasks(_sweep_instance, tasks, jobs) for r in chunk]
    summary = {"experiment_id": cfg["experiment_id"], "schema": SCHEMA_VERSION,
               "config_hash": config_hash(cfg), "config": cfg, "medians": summarize_rows(rows)}
    return ExperimentReport(list(SWEEP_COLUMNS), rows, summary)


# ---------------------------------------------------------------- regret sets

DEFAULT_REGRET_SET = {
    "experiment_id": "regret_set",
    "instance": {"kind": "pendulum", "config": {"n_theta_bins": 21, "n_thetadot_bins": 21}},
    "distributions": ["top", "bottom", "uniform"],
    "spread": 0.3,
    "epsilon": 0.01,
    "delta": 0.0,
    "n_samples": 100,
    "dirichlet_alpha": None,
    "true_set": True,
    "backend": "auto",
    "seed": 0,
}

REGRET_SET_COLUMNS = ["experiment_id", "distribution", "seed", "n_samples", "epsilon",
                      "nominal_value", "inner_hit_rate", "true_hit_rate", "status",
                      "inner_wall_time_s", "true_wall_time_s"]


def _named_beta(cmdp: Cmdp, name, spread: float) -> np.ndarray:
    if isinstance(name, str):
        if name == "uniform":
            return np.full(cmdp.n_states, 1.0 / cmdp.n_states)
        return named_distributions(cmdp, name, spread)
    return np.asarray(name, dtype=float)


def regret_set(config: Optional[dict] = None) -> ExperimentReport:
    """Hit rates of inner-approximation polytopes, optionally against re-solved true sets."""
    cfg = _merge(DEFAULT_REGRET_SET, config)
    cmdp = build_instance(instance_specs(cfg["instance"])[0])
    backend = pick_backend(cfg["backend"], cmdp.n_states)
    alpha = cfg["dirichlet_alpha"] or np.ones(cmdp.n_states)
    rows = []
    for k, name in enumerate(cfg["distributions"]):
        label = name if isinstance(name, str) else f"custom_{k}"
        beta0 = _named_beta(cmdp, name, cfg["spread"])
        row = {"experiment_id": cfg["experiment_id"], "distribution": label, "seed": cfg["seed"],
               "n_samples": cfg["n_samples"], "epsilon": float(cfg["epsilon"]),
               "nominal_value": float("nan"), "inner_hit_rate": float("nan"),
               "true_hit_rate": float("nan"), "status": "ok",
               "inner_wall_time_s": float("nan"), "true_wall_time_s": float("nan")}
        nominal = solve_cmdp(cmdp, beta0, backend=backend)
        if nominal.status != "optimal":
            row["status"] = f"nominal_{nominal.status}"
            rows.append(row)
            continue
        policy = extract_policy(nominal, cmdp)
        row["nominal_value"] = nominal.value
        t0 = time.perf_counter()
        poly = build_regret_polytope(cmdp, policy, nominal, cfg["epsilon"], cfg["delta"],
                                     provenance={"distribution": label})
        row["inner_hit_rate"] = hit_rate(poly, cfg["n_samples"], alpha, cfg["seed"])
        row["inner_wall_time_s"] = time.perf_counter() - t0
        if cfg["true_set"]:
            t0 = time.perf_counter()
            oracle = true_regret_oracle(cmdp, policy, cfg["epsilon"], cfg["delta"], backend=backend)
            row["true_hit_rate"] = hit_rate(oracle, cfg["n_samples"], alpha, cfg["seed"])
            row["true_wall_time_s"] = time.perf_counter() - t0
        rows.append(row)
    summary = {"experiment_id": cfg["experiment_id"], "schema": SCHEMA_VERSION,
               "config_hash": config_hash(cfg), "config": cfg,
               "hit_rates": [{k: r[k] for k in ("distribution", "inner_hit_rate", "true_hit_rate",
                                               "inner_wall_time_s", "true_wall_time_s")} for r in rows]}
    return ExperimentReport(list(REGRET_SET_COLUMNS), rows, summary)


# ---------------------------------------------------------------- minimal regret

DEFAULT_MIN_REGRET = {
    "experiment_id": "min_regret",
    "instance": {"kind": "pendulum", "config": {"n_theta_bins": 21, "n_thetadot_bins": 21}},
    "policy_from": "top",
    "spread": 0.3,
    "uncertainty_set": {"search": {"n_vertices": 3, "epsilon": 0.01, "max_tries": 200}},
    "n_samples": 100,
    "backend": "auto",
    "seed": 0,
}

MIN_REGRET_COLUMNS = ["experiment_id", "seed", "n_samples", "method", "direction", "value",
                      "status", "wall_time_s"]


def search_outside_vertices(cmdp: Cmdp, policy, nominal, n_vertices: int, epsilon: float,
                            rng_seed=0, max_tries: int = 200, backend: str = "simplex",
                            anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """Start distributions where ``policy`` is feasible but has more than ``epsilon`` regret.

    Feasibility under a fixed policy is linear in the start distribution,
    so a segment from the anchor (default: the nominal start) to a
    policy-feasible point stays feasible.  Each attempt draws a sparse
    Dirichlet point, keeps it only if the policy is feasible there, and
    walks from the anchor toward it until the regret exceeds ``epsilon``.
    """
    rng = np.random.default_rng(rng_seed)
    anchor = nominal.beta if anchor is None else np.asarray(anchor, float)
    v_c = np.array([evaluate_policy(cmdp, policy, k).values for k in range(cmdp.n_constraints)])
    v_c = v_c.reshape(cmdp.n_constraints, cmdp.n_states)
    v_r = evaluate_policy(cmdp, policy, "reward").values
    found = []
    for attempt in range(max_tries):
        conc = CONCENTRATION_SCHEDULE[attempt % len(CONCENTRATION_SCHEDULE)]
        target = rng.dirichlet(np.full(cmdp.n_states, conc))
        if cmdp.n_constraints and np.any(v_c @ target < cmdp.thresholds - 1e-9):
            continue
        for t in (0.25, 0.5, 1.0):
            beta = (1.0 - t) * anchor + t * target
            sol = solve_cmdp(cmdp, beta, backend=backend)
            if sol.status == "optimal" and sol.value - beta @ v_r > epsilon:
                found.append(beta)
                break
        if len(found) == n_vertices:
            return np.array(found)
    raise NumericalFailure(f"found only {len(found)} of {n_vertices} vertices in {max_tries} tries")


def _uncertainty_set(cmdp, policy, nominal, spec: dict, seed, backend) -> UncertaintySet:
    if "vertices" in spec:
        return UncertaintySet.from_vertices(spec["vertices"])
    if "H" in spec:
        return UncertaintySet.from_halfspaces(spec["H"], spec["h"])
    if "search" in spec:
        s = spec["search"]
        V = search_outside_vertices(cmdp, policy, nominal, int(s.get("n_vertices", 3)),
                                    float(s.get("epsilon", 0.01)), rng_seed=[int(seed), 1],
                                    max_tries=int(s.get("max_tries", 200)), backend=backend)
        return UncertaintySet.from_vertices(V)
    raise ValueError("uncertainty_set needs 'vertices', 'H'/'h' or 'search'")


def min_regret(config: Optional[dict] = None) -> ExperimentReport:
    """Bracket the robust minimal regret of a policy between a sampled lower and a certified upper bound."""
    cfg = _merge(DEFAULT_MIN_REGRET, config)
    cmdp = build_instance(instance_specs(cfg["instance"])[0])
    backend = pick_backend(cfg["backend"], cmdp.n_states)
    beta0 = _named_beta(cmdp, cfg["policy_from"], cfg["spread"])
    nominal = solve_cmdp(cmdp, beta0, backend=backend).require_optimal()
    policy = extract_policy(nominal, cmdp)
    uset = _uncertainty_set(cmdp, policy, nominal, cfg["uncertainty_set"], cfg["seed"], backend)

    t0 = time.perf_counter()
    if uset.is_vertex_form:
        upper, up_method = min_regret_vertices(cmdp, policy, nominal, uset), "vertices"
    else:
        upper, up_method = min_regret_hpolytope(cmdp, policy, nominal, uset), "hpolytope"
    t_up = time.perf_counter() - t0
    t0 = time.perf_counter()
    lower, details = min_regret_sampled_lower(cmdp, policy, uset, cfg["n_samples"], cfg["seed"],
                                              return_details=True, backend=backend)
    t_lo = time.perf_counter() - t0
    if lower > upper + BRACKET_TOL:
        raise NumericalFailure(f"sampled lower bound {lower} exceeds certified upper bound {upper}")
    base = {"experiment_id": cfg["experiment_id"], "seed": cfg["seed"], "n_samples": cfg["n_samples"]}
    rows = [{**base, "method": up_method, "direction": "upper", "value": upper, "status": "ok",
             "wall_time_s": t_up},
            {**base, "method": "sampled", "direction": "lower", "value": lower,
             "status": "ok" if details["n_skipped"] == 0 else f"skipped_{details['n_skipped']}",
             "wall_time_s": t_lo}]
    summary = {"experiment_id": cfg["experiment_id"], "schema": SCHEMA_VERSION,
               "config_hash": config_hash(cfg), "config": cfg, "bracket": [lower, upper],
               "uncertainty_set": uset.to_dict(), "n_skipped": details["n_skipped"]}
    return ExperimentReport(list(MIN_REGRET_COLUMNS), rows, summary)


# ---------------------------------------------------------------- generation

DEFAULT_GENERATE = {"kind": "random", "seeds": [0], "config": {}}


def generate(config: Optional[dict], out_dir) -> dict:
    """Write CMDP instance files and a ``manifest.json`` with the seeds and config hash."""
    cfg = _merge(DEFAULT_GENERATE, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if cfg["kind"] == "random":
        for s in cfg["seeds"]:
            cmdp = build_instance({"kind": "random", "seed": int(s), "config": cfg["config"]})
            name = f"random_{int(s):04d}.json"
            save_cmdp(cmdp, out / name)
            files.append(name)
        seeds = [int(s) for s in cfg["seeds"]]
    elif cfg["kind"] == "pendulum":
        pc = PendulumConfig.from_dict(cfg["config"])
        cmdp = build_pendulum_cmdp(pc)
        name = f"pendulum_{pc.n_theta_bins}x{pc.n_thetadot_bins}x{pc.n_torque_levels}.json"
        save_cmdp(cmdp, out / name)
        files.append(name)
        seeds = [pc.seed]
    else:
        raise ValueError(f"unknown generator kind {cfg['kind']!r}")
    manifest = {"kind": cfg["kind"], "files": files, "seeds": seeds,
                "config": cfg, "config_hash": config_hash(cfg)}
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest
