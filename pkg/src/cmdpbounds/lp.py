"""Occupation-measure LP for a CMDP, its dual certificate, and policy extraction.

Primal (variables ordered action-major, ``rho[a * S + s]``)::

    max  r @ rho   s.t.  C @ rho >= tau,  Psi @ rho = beta,  rho >= 0

Dual::

    min  beta @ W - tau @ lam   s.t.  Psi.T @ W >= r + C.T @ lam,  lam >= 0

Two interchangeable backends solve it: the embedded revised simplex
(``"simplex"``, default) and SciPy's HiGHS dual simplex (``"highs"``).
Both return a basic optimal solution.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cmdp import Cmdp, Policy, check_distribution, evaluate_policy
from .exceptions import DimensionMismatch, Infeasible, NumericalFailure, Unbounded
from .simplex import revised_simplex

SUPPORT_TOL = 1e-9
DEFAULT_BACKEND = "simplex"


def gap_tol(value: float) -> float:
    return 1e-7 * (1.0 + abs(value))


@dataclass(frozen=True, eq=False)
class LpInstance:
    objective: np.ndarray  # (S*A,)
    eq_matrix: np.ndarray  # Psi, (S, S*A)
    eq_rhs: np.ndarray  # beta, (S,)
    ineq_matrix: np.ndarray  # C, (K, S*A)
    ineq_rhs: np.ndarray  # tau, (K,)
    n_states: int
    n_actions: int

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.ineq_rhs.size

    def standard_form(self):
        """``(c, M, b)`` with ``M = [[C, -I], [Psi, 0]]`` and ``b = [tau; beta]``."""
        K, n = self.n_constraints, self.n_vars
        M = np.zeros((K + self.n_states, n + K))
        M[:K, :n] = self.ineq_matrix
        M[:K, n:] = -np.eye(K)
        M[K:, :n] = self.eq_matrix
        c = np.concatenate([self.objective, np.zeros(K)])
        b = np.concatenate([self.ineq_rhs, self.eq_rhs])
        return c, M, b


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    rho: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    value: Optional[float] = None
    beta: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    rho_support: Optional[np.ndarray] = None
    slack_strict: Optional[np.ndarray] = None
    backend: str = DEFAULT_BACKEND
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def require_optimal(self) -> "LpSolution":
        if self.status == "infeasible":
            raise Infeasible("CMDP LP is infeasible")
        if self.status == "unbounded":
            raise Unbounded("CMDP LP is unbounded")
        return self

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "status": self.status,
            "value": self.value,
            "rho": arr(self.rho),
            "w": arr(self.w),
            "lambda": arr(self.lam),
            "beta": arr(self.beta),
            "tau": arr(self.tau),
            "backend": self.backend,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, support_tol: float = SUPPORT_TOL,
                  cmdp: Optional[Cmdp] = None) -> "LpSolution":
        if d["status"] != "optimal":
            return cls(d["status"], backend=d.get("backend", DEFAULT_BACKEND))
        rho = np.asarray(d["rho"], dtype=float)
        tau = None if d.get("tau") is None else np.asarray(d["tau"], dtype=float)
        slack = None
        if cmdp is not None and tau is not None:
            slack = _constraint_matrix(cmdp) @ rho > tau + support_tol
        return cls(
            status="optimal", rho=rho, w=np.asarray(d["w"], dtype=float),
            lam=np.asarray(d["lambda"], dtype=float), value=float(d["value"]),
            beta=None if d.get("beta") is None else np.asarray(d["beta"], dtype=float),
            tau=tau, rho_support=rho > support_tol, slack_strict=slack,
            backend=d.get("backend", DEFAULT_BACKEND),
        )

    @classmethod
    def from_json(cls, text: str, **kw) -> "LpSolution":
        return cls.from_dict(json.loads(text), **kw)


def flatten_sa(x: np.ndarray) -> np.ndarray:
    """``(S, A)`` array to the action-major LP ordering."""
    return np.asarray(x).T.reshape(-1)


def unflatten_sa(v: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    return np.asarray(v).reshape(n_actions, n_states).T


def _constraint_matrix(cmdp: Cmdp) -> np.ndarray:
    K = cmdp.n_constraints
    return cmdp.constraint_utils.transpose(0, 2, 1).reshape(K, cmdp.n_states * cmdp.n_actions)


def build_lp(cmdp: Cmdp, beta=None, thresholds_override=None) -> LpInstance:
    S, A = cmdp.n_states, cmdp.n_actions
    b = cmdp.nominal_beta if beta is None else check_distribution(beta, S)
    if thresholds_override is None:
        tau = np.array(cmdp.thresholds, dtype=float)
    else:
        tau = np.array(thresholds_override, dtype=float).reshape(-1)
        if tau.shape != (cmdp.n_constraints,):
            raise DimensionMismatch(f"thresholds_override must have length {cmdp.n_constraints}")
    eye = np.eye(S)
    psi = np.hstack([eye - cmdp.discount * cmdp.transitions[a] for a in range(A)])
    return LpInstance(
        objective=flatten_sa(cmdp.reward),
        eq_matrix=psi,
        eq_rhs=np.array(b, dtype=float),
        ineq_matrix=_constraint_matrix(cmdp),
        ineq_rhs=tau,
        n_states=S,
        n_actions=A,
    )


def greedy_policy_iteration(cmdp: Cmdp, payoff=None, max_iter: int = 50) -> np.ndarray:
    """Deterministic optimal actions for the unconstrained MDP on ``payoff``.

    Used only to seed the simplex with a good starting basis.
    """
    f = cmdp.reward if payoff is None else payoff
    S, A = f.shape
    actions = np.argmax(f, axis=1)
    for _ in range(max_iter):
        V = evaluate_policy(cmdp, Policy.deterministic(actions, A), f).values
        Q = f + cmdp.discount * np.einsum("ats,t->sa", cmdp.transitions, V)
        best = Q[np.arange(S), actions]
        improve = Q.max(axis=1) > best + 1e-12 * (1.0 + np.abs(best))
        if not improve.any():
            break
        actions = np.where(improve, np.argmax(Q, axis=1), actions)
    return actions


def _crash_basis(cmdp: Cmdp, lp: LpInstance) -> list[int]:
    S, K, n = lp.n_states, lp.n_constraints, lp.n_vars
    actions = greedy_policy_iteration(cmdp)
    cols = actions * S + np.arange(S)
    hint = []
    if K:
        psi_b = lp.eq_matrix[:, cols]
        rho_b = np.linalg.solve(psi_b, lp.eq_rhs)
        cons = lp.ineq_matrix[:, cols] @ rho_b
        hint = [n + j if cons[j] >= lp.ineq_rhs[j] else -1 for j in range(K)]
    return hint + cols.tolist()


def _solve_with_simplex(cmdp: Cmdp, lp: LpInstance, pricing: str = "dantzig"):
    c, M, b = lp.standard_form()
    res = revised_simplex(c, M, b, basis_hint=_crash_basis(cmdp, lp), pricing=pricing)
    if res.status != "optimal":
        return res.status, None, None, None, {"iterations": res.iterations}
    K = lp.n_constraints
    rho = res.x[: lp.n_vars]
    w = res.y[K:]
    lam = np.maximum(-res.y[:K], 0.0)
    return "optimal", rho, w, lam, {"iterations": res.iterations, "basis": res.basis}


def _solve_with_highs(cmdp: Cmdp, lp: LpInstance, pricing: str = ""):
    from scipy.optimize import linprog

    K = lp.n_constraints
    kwargs = {}
    if K:
        kwargs = {"A_ub": -lp.ineq_matrix, "b_ub": -lp.ineq_rhs}
    res = linprog(-lp.objective, A_eq=lp.eq_matrix, b_eq=lp.eq_rhs, bounds=(0, None),
                  method="highs-ds", **kwargs)
    if res.status not in (0, 2, 3):
        # dual simplex occasionally stalls on infeasible models; IPM + crossover still ends basic
        res = linprog(-lp.objective, A_eq=lp.eq_matrix, b_eq=lp.eq_rhs, bounds=(0, None),
                      method="highs-ipm", **kwargs)
    if res.status == 2:
        return "infeasible", None, None, None, {}
    if res.status == 3:
        return "unbounded", None, None, None, {}
    if res.status != 0:
        raise NumericalFailure(f"HiGHS failed: {res.message}")
    w = -np.asarray(res.eqlin.marginals)
    lam = np.maximum(-np.asarray(res.ineqlin.marginals), 0.0) if K else np.zeros(0)
    return "optimal", np.maximum(res.x, 0.0), w, lam, {"iterations": int(res.nit)}


BACKENDS = {"simplex": _solve_with_simplex, "highs": _solve_with_highs}


def solve_cmdp(cmdp: Cmdp, beta=None, thresholds_override=None,
               backend: str = DEFAULT_BACKEND, support_tol: float = SUPPORT_TOL,
               pricing: str = "dantzig") -> LpSolution:
    """Solve the CMDP LP at ``beta`` (default: the nominal distribution).

    Infeasible and unbounded problems are reported through ``status``
    rather than raised; call :meth:`LpSolution.require_optimal` to raise.
    ``pricing`` only affects the simplex backend (see
    :func:`cmdpbounds.simplex.revised_simplex`).
    """
    lp = build_lp(cmdp, beta, thresholds_override)
    try:
        solve = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown LP backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    status, rho, w, lam, info = solve(cmdp, lp, pricing)
    if status != "optimal":
        return LpSolution(status, beta=lp.eq_rhs, tau=lp.ineq_rhs, backend=backend, info=info)

    value = float(lp.objective @ rho)
    dual_value = float(lp.eq_rhs @ w - lp.ineq_rhs @ lam)
    if abs(value - dual_value) > gap_tol(value):
        raise NumericalFailure(f"duality gap {abs(value - dual_value):.3e} exceeds tolerance")
    cons = lp.ineq_matrix @ rho
    for arr in (rho, w, lam):
        arr.setflags(write=False)
    return LpSolution(
        status="optimal", rho=rho, w=w, lam=lam, value=value,
        beta=lp.eq_rhs, tau=lp.ineq_rhs,
        rho_support=rho > support_tol,
        slack_strict=cons > lp.ineq_rhs + support_tol,
        backend=backend, info=info,
    )


def extract_policy(solution: LpSolution, cmdp: Cmdp, support_tol: float = SUPPORT_TOL) -> Policy:
    """Normalize the occupation measure per state; unvisited states act uniformly."""
    solution.require_optimal()
    rho = unflatten_sa(solution.rho, cmdp.n_states, cmdp.n_actions)
    mass = rho.sum(axis=1, keepdims=True)
    uniform = np.full_like(rho, 1.0 / cmdp.n_actions)
    probs = np.where(mass > support_tol, rho / np.where(mass > support_tol, mass, 1.0), uniform)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return Policy(probs)


def check_beta_feasibility(cmdp: Cmdp, beta, backend: str = DEFAULT_BACKEND) -> bool:
    """Phase-one test: does some occupation measure meet the constraints at ``beta``?"""
    lp = build_lp(cmdp, beta)
    c, M, b = lp.standard_form()
    if backend == "highs":
        from scipy.optimize import linprog

        res = linprog(np.zeros(c.size), A_eq=M, b_eq=b, bounds=(0, None), method="highs")
        if res.status not in (0, 2):
            raise NumericalFailure(f"HiGHS failed: {res.message}")
        return res.status == 0
    return revised_simplex(np.zeros(c.size), M, b, basis_hint=_crash_basis(cmdp, lp)).status == "optimal"
