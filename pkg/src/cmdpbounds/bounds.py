"""Upper and lower bounds on ``V*(beta1)`` computed from one nominal solve.

Three families are provided:

* duality: the nominal dual pair stays dual-feasible for every start
  distribution, so its objective ``beta1 @ W - (tau - delta) @ lam`` is an
  upper bound (linear in ``beta1``);
* perturbation: a right-hand-side conditioning bound built from the
  nominal basis partition of ``[[C, -I], [Psi, 0]]``;
* concavity: Jensen-type bounds from the concavity of the LP value over
  feasible start distributions, which needs ``|S| + 1`` extra solves.
"""
from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .cmdp import Cmdp, check_distribution
from .exceptions import DegenerateBasis, InfeasibleVertex, NotOptimal, SingularR, ZeroTrueValue
from .lp import LpSolution, build_lp, solve_cmdp

SINGULAR_TOL = 1e-12


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass(frozen=True, eq=False)
class BoundCertificate:
    method: str  # "duality" | "perturbation" | "concavity"
    direction: str  # "upper" | "lower"
    value: float
    nominal_beta: Optional[np.ndarray]
    delta: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "direction": self.direction,
            "value": float(self.value),
            "nominal_beta": _jsonable(self.nominal_beta),
            "delta": _jsonable(self.delta),
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "BoundCertificate":
        nb = d.get("nominal_beta")
        return cls(d["method"], d["direction"], float(d["value"]),
                   None if nb is None else np.asarray(nb, dtype=float),
                   np.asarray(d.get("delta", []), dtype=float), dict(d.get("metadata", {})))


def _require_optimal(nominal: LpSolution):
    if nominal.status != "optimal":
        raise NotOptimal(f"nominal solve has status {nominal.status!r}")


def _delta_vector(delta, k: int) -> np.ndarray:
    if delta is None:
        return np.zeros(k)
    d = np.asarray(delta, dtype=float).reshape(-1)
    if d.size == 1 and k != 1:
        d = np.full(k, float(d[0]))
    if d.shape != (k,):
        raise ValueError(f"delta must have length {k}")
    if np.any(d < 0):
        raise ValueError("delta must be componentwise nonnegative")
    return d


def duality_upper_bound(nominal: LpSolution, beta1, delta=None) -> BoundCertificate:
    """``beta1 @ W*(beta0) - (tau - delta) @ lam*(beta0)`` as an upper certificate."""
    _require_optimal(nominal)
    b1 = check_distribution(beta1, nominal.w.size, "beta1")
    d = _delta_vector(delta, nominal.lam.size)
    value = float(b1 @ nominal.w - (nominal.tau - d) @ nominal.lam)
    return BoundCertificate("duality", "upper", value, nominal.beta, d,
                            {"w": nominal.w, "lambda": nominal.lam})


@dataclass(frozen=True, eq=False)
class PerturbationContext:
    """Everything the perturbation bound needs from the nominal basis."""

    r_inv_norm: float
    w0_norm: float
    reward_norm: float
    nominal_value: float
    tau: np.ndarray
    beta0: np.ndarray
    basic_columns: np.ndarray
    nonbasic_columns: np.ndarray
    sigma_min: float

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__.copy())


def partition_columns(nominal: LpSolution) -> np.ndarray:
    """Boolean mask over the columns of ``[[C, -I], [Psi, 0]]`` that go to ``R1``."""
    return np.concatenate([nominal.rho_support, nominal.slack_strict])


def assemble_r_matrix(M: np.ndarray, in_r1: np.ndarray) -> np.ndarray:
    """Block matrix ``[[R1, 0, 0], [0, R1.T, 0], [0, R2.T, I]]``."""
    R1 = M[:, in_r1]
    R2 = M[:, ~in_r1]
    m = M.shape[0]
    if R1.shape[1] != m:
        raise DegenerateBasis(
            f"{R1.shape[1]} strictly positive basic columns, need {m}: nominal solution is degenerate")
    p = R2.shape[1]
    R = np.zeros((2 * m + p, 2 * m + p))
    R[:m, :m] = R1
    R[m:2 * m, m:2 * m] = R1.T
    R[2 * m:, m:2 * m] = R2.T
    R[2 * m:, 2 * m:] = np.eye(p)
    return R


def build_perturbation_context(cmdp: Cmdp, nominal: LpSolution) -> PerturbationContext:
    """Partition, assemble ``R`` and compute ``||R^-1|| = 1 / sigma_min(R)`` by SVD."""
    _require_optimal(nominal)
    lp = build_lp(cmdp, nominal.beta, nominal.tau)
    _, M, _ = lp.standard_form()
    in_r1 = partition_columns(nominal)
    R = assemble_r_matrix(M, in_r1)
    sigma = scipy.linalg.svdvals(R, check_finite=False)
    smin = float(sigma.min())
    if smin < SINGULAR_TOL:
        raise SingularR(f"sigma_min(R) = {smin:.3e}")
    return PerturbationContext(
        r_inv_norm=1.0 / smin,
        w0_norm=float(np.linalg.norm(nominal.w)),
        reward_norm=float(np.linalg.norm(lp.objective)),
        nominal_value=float(nominal.value),
        tau=np.array(nominal.tau),
        beta0=np.array(nominal.beta),
        basic_columns=np.flatnonzero(in_r1),
        nonbasic_columns=np.flatnonzero(~in_r1),
        sigma_min=smin,
    )


def perturbation_radius(ctx: PerturbationContext, beta1) -> float:
    """``min(||[beta1; -tau]|| ||R^-1|| + ||W0||, ||R^-1|| ||r||)``."""
    stacked = np.linalg.norm(np.concatenate([np.asarray(beta1, float), -ctx.tau]))
    return min(stacked * ctx.r_inv_norm + ctx.w0_norm, ctx.r_inv_norm * ctx.reward_norm)


def perturbation_bounds(ctx: PerturbationContext, beta0, beta1, delta=None
                        ) -> tuple[BoundCertificate, Optional[BoundCertificate]]:
    """Upper and lower certificates; only the upper one when ``delta != 0``."""
    b0 = np.asarray(beta0, dtype=float)
    b1 = check_distribution(beta1, b0.size, "beta1")
    d = _delta_vector(delta, ctx.tau.size)
    step = np.linalg.norm(b0 - b1)
    radius = perturbation_radius(ctx, b1)
    meta = {"r_inv_norm": ctx.r_inv_norm, "w0_norm": ctx.w0_norm,
            "nominal_value": ctx.nominal_value, "radius": radius}
    if np.any(d > 0):
        phi = float(np.sqrt(d @ d + step ** 2))
        upper = BoundCertificate("perturbation", "upper", ctx.nominal_value + phi * radius,
                                 b0, d, {**meta, "phi": phi})
        return upper, None
    gap = step * radius
    upper = BoundCertificate("perturbation", "upper", ctx.nominal_value + gap, b0, d, meta)
    lower = BoundCertificate("perturbation", "lower", ctx.nominal_value - gap, b0, d, meta)
    return upper, lower


@dataclass(frozen=True, eq=False)
class ConcavityValues:
    """Optimal values at the uniform start and at every point-mass start."""

    uniform_value: float
    vertex_values: np.ndarray  # NaN where the point-mass start is infeasible
    uniform_feasible: bool

    @property
    def vertex_feasible(self) -> np.ndarray:
        return ~np.isnan(self.vertex_values)


_concavity_cache: "weakref.WeakKeyDictionary[Cmdp, dict]" = weakref.WeakKeyDictionary()


def concavity_values(cmdp: Cmdp, solver: Optional[Callable] = None, **solver_kw) -> ConcavityValues:
    """Solve at the uniform start and all ``|S|`` vertices, once per CMDP object."""
    key = (id(solver), tuple(sorted(solver_kw.items())))
    per_cmdp = _concavity_cache.setdefault(cmdp, {})
    if key in per_cmdp:
        return per_cmdp[key]
    solve = solver or solve_cmdp
    n = cmdp.n_states
    uni = solve(cmdp, np.full(n, 1.0 / n), None, **solver_kw)
    verts = np.full(n, np.nan)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        sol = solve(cmdp, e, None, **solver_kw)
        if sol.status == "optimal":
            verts[i] = sol.value
    out = ConcavityValues(float(uni.value) if uni.status == "optimal" else float("nan"),
                          verts, uni.status == "optimal")
    per_cmdp[key] = out
    return out


def concavity_upper_bound(cmdp: Cmdp, beta1, solver: Optional[Callable] = None,
                          values: Optional[ConcavityValues] = None, **solver_kw) -> BoundCertificate:
    """``alpha n V*(uniform) - sum_i (alpha - beta1_i) V*(e_i)`` with ``alpha = max beta1``."""
    b1 = check_distribution(beta1, cmdp.n_states, "beta1")
    vals = values or concavity_values(cmdp, solver, **solver_kw)
    if not vals.uniform_feasible or not vals.vertex_feasible.all():
        bad = np.flatnonzero(~vals.vertex_feasible).tolist()
        raise InfeasibleVertex(f"uniform feasible={vals.uniform_feasible}, infeasible vertices {bad}")
    alpha = float(b1.max())
    n = cmdp.n_states
    value = alpha * n * vals.uniform_value - float((alpha - b1) @ vals.vertex_values)
    return BoundCertificate("concavity", "upper", value, None, np.zeros(cmdp.n_constraints),
                            {"alpha": alpha, "uniform_value": vals.uniform_value,
                             "vertex_values": vals.vertex_values})


def concavity_lower_bound(cmdp: Cmdp, beta1, solver: Optional[Callable] = None,
                          values: Optional[ConcavityValues] = None, **solver_kw) -> BoundCertificate:
    """``sum_i beta1_i V*(e_i)`` over the support of ``beta1``."""
    b1 = check_distribution(beta1, cmdp.n_states, "beta1")
    vals = values or concavity_values(cmdp, solver, **solver_kw)
    support = b1 > 0
    if not vals.vertex_feasible[support].all():
        bad = np.flatnonzero(support & ~vals.vertex_feasible).tolist()
        raise InfeasibleVertex(f"point-mass starts {bad} are infeasible")
    value = float(b1[support] @ vals.vertex_values[support])
    return BoundCertificate("concavity", "lower", value, None, np.zeros(cmdp.n_constraints),
                            {"vertex_values": vals.vertex_values})


def relative_looseness(true_value: float, bound_value: float) -> float:
    """Gap between bound and truth as a percentage of ``|truth|``."""
    if true_value == 0:
        raise ZeroTrueValue("relative looseness is undefined for a zero true value")
    return 100.0 * abs(bound_value - true_value) / abs(true_value)
