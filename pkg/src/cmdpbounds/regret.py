"""Regret sets and robust minimal regret for a fixed policy.

A policy has (delta, eps)-regret at ``beta`` when it violates each
constraint by at most ``delta_i`` and its reward falls short of
``V*(beta, tau - delta)`` by at most ``eps``.  Replacing ``V*`` by the
(linear) duality upper bound turns the regret set into a polytope that is
an inner approximation of the true set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cmdp import Cmdp, Policy, check_distribution, evaluate_policy
from .exceptions import AuxiliaryInfeasible, InfeasibleVertex, NotOptimal, NumericalFailure
from .lp import LpSolution, solve_cmdp
from .simplex import revised_simplex

MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RegretPolytope:
    """``{beta : G beta >= g}``; row 0 is the reward row, rows 1..K the constraints."""

    g_matrix: np.ndarray
    g_rhs: np.ndarray
    epsilon: float
    delta: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.g_matrix.shape[1]

    def slack(self, betas) -> np.ndarray:
        """Per-row slack ``G beta - g``; shape ``(n, K + 1)`` for a batch."""
        B = np.atleast_2d(np.asarray(betas, dtype=float))
        return B @ self.g_matrix.T - self.g_rhs

    def contains(self, betas) -> np.ndarray:
        return np.all(self.slack(betas) >= -MEMBERSHIP_TOL, axis=1)

    def __call__(self, beta) -> bool:
        return membership(self, beta)

    def to_dict(self) -> dict:
        return {"g_matrix": self.g_matrix.tolist(), "g_rhs": self.g_rhs.tolist(),
                "epsilon": self.epsilon, "delta": self.delta.tolist(),
                "provenance": self.provenance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RegretPolytope":
        return cls(np.asarray(d["g_matrix"], float), np.asarray(d["g_rhs"], float),
                   float(d["epsilon"]), np.asarray(d["delta"], float), dict(d.get("provenance", {})))


def build_regret_polytope(cmdp: Cmdp, policy: Policy, nominal: LpSolution, epsilon: float,
                          delta=None, provenance: Optional[dict] = None) -> RegretPolytope:
    """Inner approximation of the start distributions where ``policy`` has (delta, eps)-regret."""
    if nominal.status != "optimal":
        raise NotOptimal(f"nominal solve has status {nominal.status!r}")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    K = cmdp.n_constraints
    d = np.zeros(K) if delta is None else np.broadcast_to(np.asarray(delta, float), (K,)).copy()
    if np.any(d < 0):
        raise ValueError("delta must be componentwise nonnegative")
    v_r = evaluate_policy(cmdp, policy, "reward").values
    rows = [v_r - nominal.w]
    rhs = [-(nominal.tau - d) @ nominal.lam - epsilon]
    for k in range(K):
        rows.append(evaluate_policy(cmdp, policy, k).values)
        rhs.append(nominal.tau[k] - d[k])
    prov = {"nominal_beta": np.asarray(nominal.beta).tolist(), "bound": "duality",
            "backend": nominal.backend}
    prov.update(provenance or {})
    return RegretPolytope(np.vstack(rows), np.asarray(rhs, dtype=float), float(epsilon), d, prov)


def membership(polytope: RegretPolytope, beta) -> bool:
    return bool(polytope.contains(beta)[0])


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Either ``conv(vertices)`` or ``{beta : H beta <= h}`` inside the simplex."""

    vertices: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None

    @classmethod
    def from_vertices(cls, vertices) -> "UncertaintySet":
        V = np.atleast_2d(np.asarray(vertices, dtype=float))
        for v in V:
            check_distribution(v, V.shape[1], "vertex")
        return cls(vertices=V)

    @classmethod
    def from_halfspaces(cls, H, h, check_bounded: bool = True) -> "UncertaintySet":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.shape != (H.shape[0],):
            raise ValueError("H and h have inconsistent shapes")
        out = cls(H=H, h=h)
        if check_bounded and not out.is_bounded():
            raise ValueError("H-form uncertainty set is unbounded")
        return out

    @property
    def is_vertex_form(self) -> bool:
        return self.vertices is not None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1] if self.is_vertex_form else self.H.shape[1]

    def is_bounded(self) -> bool:
        """LP in each coordinate direction; an empty set counts as bounded."""
        from scipy.optimize import linprog

        n = self.dim
        for i in range(n):
            for sign in (1.0, -1.0):
                c = np.zeros(n)
                c[i] = -sign
                res = linprog(c, A_ub=self.H, b_ub=self.h, bounds=(None, None), method="highs")
                if res.status == 3:
                    return False
                if res.status == 2:
                    return True
        return True

    def to_dict(self) -> dict:
        if self.is_vertex_form:
            return {"vertices": self.vertices.tolist()}
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintySet":
        if "vertices" in d:
            return cls.from_vertices(d["vertices"])
        return cls.from_halfspaces(d["H"], d["h"])


def simplex_halfspaces(n: int) -> tuple[np.ndarray, np.ndarray]:
    """H-form of the probability simplex: ``-beta <= 0``, ``sum beta <= 1``, ``-sum beta <= -1``."""
    H = np.vstack([-np.eye(n), np.ones((1, n)), -np.ones((1, n))])
    h = np.concatenate([np.zeros(n), [1.0, -1.0]])
    return H, h


def _regret_direction(cmdp: Cmdp, policy: Policy, nominal: LpSolution) -> np.ndarray:
    if nominal.status != "optimal":
        raise NotOptimal(f"nominal solve has status {nominal.status!r}")
    return nominal.w - evaluate_policy(cmdp, policy, "reward").values


def min_regret_vertices(cmdp: Cmdp, policy: Policy, nominal: LpSolution, vertices) -> float:
    """Upper bound on the worst-case regret of ``policy`` over ``conv(vertices)``."""
    V = vertices.vertices if isinstance(vertices, UncertaintySet) else np.atleast_2d(vertices)
    if V is None:
        raise TypeError("min_regret_vertices needs a vertex-form set")
    for k in range(cmdp.n_constraints):
        cons = V @ evaluate_policy(cmdp, policy, k).values
        bad = np.flatnonzero(cons < cmdp.thresholds[k] - MEMBERSHIP_TOL)
        if bad.size:
            raise InfeasibleVertex(f"policy violates constraint {k} at vertices {bad.tolist()}")
    g = _regret_direction(cmdp, policy, nominal)
    return float(np.max(V @ g) - nominal.tau @ nominal.lam)


def min_regret_hpolytope(cmdp: Cmdp, policy: Policy, nominal: LpSolution, uset) -> float:
    """Robust-counterpart LP: ``min eps`` s.t. ``h @ z - tau @ lam <= eps``, ``H.T z = W - V_r``, ``z >= 0``."""
    if isinstance(uset, UncertaintySet):
        H, h = uset.H, uset.h
    else:
        H, h = uset
    if H is None:
        raise TypeError("min_regret_hpolytope needs an H-form set")
    H = np.asarray(H, float)
    h = np.asarray(h, float)
    g = _regret_direction(cmdp, policy, nominal)
    offset = float(nominal.tau @ nominal.lam)
    p, n = H.shape
    # standard form over [z (p), e_plus, e_minus, s]:
    #   h @ z - e_plus + e_minus + s = offset ;  H.T @ z = g
    A = np.zeros((1 + n, p + 3))
    A[0, :p] = h
    A[0, p:] = [-1.0, 1.0, 1.0]
    A[1:, :p] = H.T
    b = np.concatenate([[offset], g])
    c = np.zeros(p + 3)
    c[p:p + 2] = [-1.0, 1.0]
    res = revised_simplex(c, A, b, pricing="dantzig")
    if res.status == "infeasible":
        raise AuxiliaryInfeasible("no z >= 0 with H.T z = W - V_r; the robust counterpart has no certificate")
    if res.status == "unbounded":
        raise NumericalFailure("auxiliary LP unbounded: the uncertainty set is empty")
    return float(res.x[p] - res.x[p + 1])


def dirichlet_mixtures(vertices: np.ndarray, n_samples: int, rng) -> np.ndarray:
    V = np.atleast_2d(vertices)
    if V.shape[0] == 1:
        return np.repeat(V, n_samples, axis=0)
    W = rng.dirichlet(np.ones(V.shape[0]), size=n_samples)
    return W @ V


def _interior_point(H: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Chebyshev center of the set within the hyperplane ``sum beta = 1``."""
    from scipy.optimize import linprog

    n = H.shape[1]
    P = np.eye(n) - np.full((n, n), 1.0 / n)
    norms = np.linalg.norm(H @ P, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([H, norms[:, None]])
    A_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=h, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(None, None)] * n + [(0, 1.0)], method="highs")
    if res.status != 0:
        raise ValueError("could not find a point inside the H-form set")
    return res.x[:n]


def hit_and_run(H, h, n_samples: int, rng, burn_in: Optional[int] = None,
                start: Optional[np.ndarray] = None) -> np.ndarray:
    """Hit-and-run walk on ``{beta : H beta <= h, sum beta = 1}``.

    Directions are uniform on the sphere of the zero-sum subspace.  The
    default burn-in is ``100 * dim`` steps.
    """
    H = np.asarray(H, float)
    h = np.asarray(h, float)
    n = H.shape[1]
    x = _interior_point(H, h) if start is None else np.array(start, float)
    burn = 100 * n if burn_in is None else burn_in
    out = np.empty((n_samples, n))
    for step in range(burn + n_samples):
        d = rng.standard_normal(n)
        d -= d.mean()
        d /= np.linalg.norm(d)
        Hd = H @ d
        room = h - H @ x
        lo, hi = -np.inf, np.inf
        pos, neg = Hd > 1e-12, Hd < -1e-12
        if pos.any():
            hi = np.min(room[pos] / Hd[pos])
        if neg.any():
            lo = np.max(room[neg] / Hd[neg])
        if np.isfinite(lo) and np.isfinite(hi) and hi > lo:
            x = x + rng.uniform(lo, hi) * d
        if step >= burn:
            out[step - burn] = x
    return out


def sample_uncertainty_set(uset: UncertaintySet, n_samples: int, rng) -> np.ndarray:
    if uset.is_vertex_form:
        return dirichlet_mixtures(uset.vertices, n_samples, rng)
    return hit_and_run(uset.H, uset.h, n_samples, rng)


def min_regret_sampled_lower(cmdp: Cmdp, policy: Policy, uset, n_samples: int,
                             rng_seed=0, solver: Optional[Callable] = None,
                             return_details: bool = False, **solver_kw):
    """Lower bound on the worst-case regret by re-solving at sampled points of the set.

    Samples whose CMDP is infeasible are skipped and counted.
    """
    if not isinstance(uset, UncertaintySet):
        uset = UncertaintySet.from_vertices(uset)
    solve = solver or solve_cmdp
    rng = np.random.default_rng(rng_seed)
    samples = sample_uncertainty_set(uset, n_samples, rng)
    v_r = evaluate_policy(cmdp, policy, "reward").values
    regrets = np.full(n_samples, np.nan)
    for i, beta in enumerate(samples):
        beta = np.clip(beta, 0.0, None)
        beta /= beta.sum()
        sol = solve(cmdp, beta, None, **solver_kw)
        if sol.status == "optimal":
            regrets[i] = sol.value - beta @ v_r
    feasible = ~np.isnan(regrets)
    value = float(np.max(regrets[feasible])) if feasible.any() else float("nan")
    if return_details:
        return value, {"samples": samples, "regrets": regrets, "n_skipped": int((~feasible).sum())}
    return value


def true_regret_oracle(cmdp: Cmdp, policy: Policy, epsilon: float, delta=None,
                       solver: Optional[Callable] = None, **solver_kw) -> Callable[[np.ndarray], bool]:
    """Exact membership in the (delta, eps)-regret set by re-solving; infeasible points are misses."""
    solve = solver or solve_cmdp
    K = cmdp.n_constraints
    d = np.zeros(K) if delta is None else np.broadcast_to(np.asarray(delta, float), (K,))
    v_r = evaluate_policy(cmdp, policy, "reward").values
    v_c = np.array([evaluate_policy(cmdp, policy, k).values for k in range(K)]).reshape(K, -1)

    def test(beta) -> bool:
        beta = np.asarray(beta, float)
        if K and np.any(cmdp.thresholds - v_c @ beta > d + MEMBERSHIP_TOL):
            return False
        sol = solve(cmdp, beta, cmdp.thresholds - d, **solver_kw)
        if sol.status != "optimal":
            return False
        return bool(sol.value - beta @ v_r <= epsilon)

    return test


def hit_rate(test, n_samples: int, dirichlet_alpha=None, rng_seed=0,
             n_states: Optional[int] = None) -> float:
    """Fraction of Dirichlet draws accepted by ``test``.

    ``test`` is a :class:`RegretPolytope` (evaluated in one batch) or any
    callable ``beta -> bool``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if dirichlet_alpha is None:
        n = n_states if n_states is not None else getattr(test, "n_states", None)
        if n is None:
            raise ValueError("pass dirichlet_alpha or n_states for a plain callable")
        dirichlet_alpha = np.ones(n)
    rng = np.random.default_rng(rng_seed)
    samples = rng.dirichlet(np.asarray(dirichlet_alpha, float), size=n_samples)
    if isinstance(test, RegretPolytope):
        hits = test.contains(samples)
    else:
        hits = np.array([bool(test(b)) for b in samples])
    return float(hits.mean())
