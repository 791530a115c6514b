"""CMDP data types, validation, JSON I/O and fixed-policy evaluation.

Transitions are stored column-stochastic per action:
``transitions[a, i, j] = P(s_i | s_j, a)``.  This is the layout the
occupation-measure LP uses directly (``Psi`` block ``I - gamma * T^a``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

import numpy as np
import scipy.linalg

from .exceptions import (
    BadDiscount,
    BadDistribution,
    DimensionMismatch,
    InfeasibleInstance,
    NotStochastic,
    NumericalFailure,
    SingularSystem,
)

_EXACT_TOL = 1e-12
_NORMALIZE_TOL = 1e-9
_ROUNDING_TOL = 1e-14  # drift this small is float rounding; leave it so round trips are exact
RESIDUAL_TOL = 1e-10

Payoff = Union[str, int, np.ndarray]


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Cmdp:
    """Immutable finite CMDP ``(S, A, P, r, c, tau, gamma, beta0)``.

    Build instances through :func:`validate_cmdp`; the constructor itself
    does not check stochasticity.
    """

    transitions: np.ndarray  # (A, S_to, S_from)
    reward: np.ndarray  # (S, A)
    constraint_utils: np.ndarray  # (K, S, A)
    thresholds: np.ndarray  # (K,)
    discount: float
    nominal_beta: np.ndarray  # (S,)
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.constraint_utils.shape[0]

    def with_thresholds(self, thresholds) -> "Cmdp":
        tau = _frozen(thresholds)
        if tau.shape != (self.n_constraints,):
            raise DimensionMismatch(f"thresholds must have shape ({self.n_constraints},)")
        return Cmdp(self.transitions, self.reward, self.constraint_utils, tau,
                    self.discount, self.nominal_beta, self.meta)

    def with_beta(self, beta) -> "Cmdp":
        return Cmdp(self.transitions, self.reward, self.constraint_utils, self.thresholds,
                    self.discount, check_distribution(beta, self.n_states), self.meta)

    def to_dict(self) -> dict:
        out = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_constraints": self.n_constraints,
            "gamma": float(self.discount),
            "thresholds": self.thresholds.tolist(),
            "beta0": self.nominal_beta.tolist(),
            "reward": self.reward.tolist(),
            "constraints": self.constraint_utils.tolist(),
            "transitions": self.transitions.tolist(),
        }
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy, ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise DimensionMismatch("policy probabilities must be a 2-D array [s][a]")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > _EXACT_TOL):
            raise BadDistribution("each policy row must be a probability vector")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class ValueVector:
    values: np.ndarray
    payoff_kind: str

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def at(self, beta) -> float:
        return float(np.dot(beta, self.values))


@dataclass(frozen=True)
class RegretPair:
    delta: np.ndarray
    epsilon: float

    def __post_init__(self):
        delta = _frozen(self.delta)
        if np.any(delta < 0):
            raise ValueError("delta must be componentwise nonnegative")
        object.__setattr__(self, "delta", delta)


def check_distribution(beta, n_states: int, name: str = "beta") -> np.ndarray:
    """Return ``beta`` as a frozen probability vector, renormalizing tiny drift."""
    b = np.array(beta, dtype=float)
    if b.shape != (n_states,):
        raise BadDistribution(f"{name} must have shape ({n_states},), got {b.shape}")
    if not np.all(np.isfinite(b)) or np.any(b < 0):
        raise BadDistribution(f"{name} entries must be finite and nonnegative")
    total = b.sum()
    if abs(total - 1.0) >= _NORMALIZE_TOL:
        raise BadDistribution(f"{name} sums to {total!r}, not 1")
    if abs(total - 1.0) > _ROUNDING_TOL:
        b = b / total
    b.setflags(write=False)
    return b


def _get(raw: Mapping[str, Any], *keys, default=None):
    for k in keys:
        if k in raw:
            return raw[k]
    return default


def validate_cmdp(raw: Mapping[str, Any]) -> Cmdp:
    """Check and normalize an unchecked CMDP description.

    ``raw`` may use either the JSON file keys (``gamma``, ``beta0``,
    ``constraints``) or the field names of :class:`Cmdp`.  Transition
    columns whose sum is within 1e-9 of one are renormalized; anything
    further off raises :class:`NotStochastic`.
    """
    try:
        T = np.array(_get(raw, "transitions"), dtype=float)
        r = np.array(_get(raw, "reward"), dtype=float)
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"transitions/reward are not rectangular arrays: {exc}") from exc
    if r.ndim != 2:
        raise DimensionMismatch("reward must be indexed [s][a]")
    n_s, n_a = r.shape
    n_s = int(_get(raw, "n_states", default=n_s))
    n_a = int(_get(raw, "n_actions", default=n_a))
    if n_s < 1 or n_a < 1:
        raise DimensionMismatch("need at least one state and one action")
    if r.shape != (n_s, n_a):
        raise DimensionMismatch(f"reward shape {r.shape} != ({n_s}, {n_a})")
    if T.shape != (n_a, n_s, n_s):
        raise DimensionMismatch(f"transitions shape {T.shape} != ({n_a}, {n_s}, {n_s})")

    c_raw = _get(raw, "constraints", "constraint_utils", default=None)
    n_k = _get(raw, "n_constraints", default=None)
    if c_raw is None or (n_k == 0 and len(c_raw) == 0):
        c = np.zeros((0, n_s, n_a))
    else:
        c = np.array(c_raw, dtype=float)
    n_k = int(c.shape[0] if n_k is None else n_k)
    if c.shape != (n_k, n_s, n_a):
        raise DimensionMismatch(f"constraints shape {c.shape} != ({n_k}, {n_s}, {n_a})")
    tau = np.array(_get(raw, "thresholds", default=[]), dtype=float).reshape(-1)
    if tau.shape != (n_k,):
        raise DimensionMismatch(f"thresholds length {tau.size} != {n_k}")

    gamma = float(_get(raw, "gamma", "discount"))
    if not (0.0 <= gamma < 1.0):
        raise BadDiscount(f"discount must lie in [0, 1), got {gamma}")

    if not np.all(np.isfinite(T)) or np.any(T < 0):
        raise NotStochastic("transition probabilities must be finite and nonnegative")
    col_sums = T.sum(axis=1)  # (A, S_from)
    drift = np.abs(col_sums - 1.0)
    if np.any(drift >= _NORMALIZE_TOL):
        a, s = np.unravel_index(np.argmax(drift), drift.shape)
        raise NotStochastic(f"column (a={a}, s={s}) sums to {col_sums[a, s]!r}")
    T = np.where((drift > _ROUNDING_TOL)[:, None, :], T / col_sums[:, None, :], T)

    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c)) and np.all(np.isfinite(tau))):
        raise DimensionMismatch("reward, constraints and thresholds must be finite")

    beta = _get(raw, "beta0", "nominal_beta", default=None)
    beta = np.full(n_s, 1.0 / n_s) if beta is None else beta
    beta = check_distribution(beta, n_s, "beta0")
    meta = dict(_get(raw, "meta", default={}) or {})
    return Cmdp(_frozen(T), _frozen(r), _frozen(c), _frozen(tau), gamma, beta, meta)


def load_cmdp(path) -> Cmdp:
    with open(path) as fh:
        return validate_cmdp(json.load(fh))


def save_cmdp(cmdp: Cmdp, path) -> None:
    Path(path).write_text(json.dumps(cmdp.to_dict()))


def payoff_matrix(cmdp: Cmdp, payoff: Payoff) -> tuple[np.ndarray, str]:
    """Resolve a payoff selector to an ``(S, A)`` array and a kind tag.

    ``"reward"`` selects r, an integer ``k`` selects constraint utility k,
    and an array is used as-is.
    """
    if isinstance(payoff, str):
        if payoff != "reward":
            raise ValueError(f"unknown payoff selector {payoff!r}")
        return cmdp.reward, "reward"
    if isinstance(payoff, (int, np.integer)):
        if not 0 <= payoff < cmdp.n_constraints:
            raise IndexError(f"constraint index {payoff} out of range")
        return cmdp.constraint_utils[payoff], f"constraint {int(payoff)}"
    f = np.asarray(payoff, dtype=float)
    if f.shape != (cmdp.n_states, cmdp.n_actions):
        raise DimensionMismatch(f"payoff array must have shape ({cmdp.n_states}, {cmdp.n_actions})")
    return f, "custom"


def policy_transition_matrix(cmdp: Cmdp, policy: Policy) -> np.ndarray:
    """Row-stochastic ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    if policy.probs.shape != (cmdp.n_states, cmdp.n_actions):
        raise DimensionMismatch(
            f"policy shape {policy.probs.shape} != ({cmdp.n_states}, {cmdp.n_actions})")
    return np.einsum("sa,ats->st", policy.probs, cmdp.transitions)


def evaluate_policy(cmdp: Cmdp, policy: Policy, payoff: Payoff = "reward") -> ValueVector:
    """Solve ``(I - gamma P_pi) V = f_pi`` by LU for the payoff's value vector."""
    f, kind = payoff_matrix(cmdp, payoff)
    P = policy_transition_matrix(cmdp, policy)
    f_pi = np.einsum("sa,sa->s", policy.probs, f)
    A = np.eye(cmdp.n_states) - cmdp.discount * P
    try:
        lu = scipy.linalg.lu_factor(A, check_finite=False)
        V = scipy.linalg.lu_solve(lu, f_pi, check_finite=False)
        resid = A @ V - f_pi
        if np.max(np.abs(resid), initial=0.0) > RESIDUAL_TOL:
            V = V - scipy.linalg.lu_solve(lu, resid, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(V)):
        raise SingularSystem("policy evaluation produced non-finite values")
    V.setflags(write=False)
    return ValueVector(V, kind)


def policy_value(cmdp: Cmdp, policy: Policy, payoff: Payoff, beta) -> float:
    b = check_distribution(beta, cmdp.n_states)
    return evaluate_policy(cmdp, policy, payoff).at(b)


def minimal_regret(cmdp: Cmdp, policy: Policy, beta,
                   solver: Optional[Callable] = None) -> RegretPair:
    """Smallest ``(delta, epsilon)`` for which ``policy`` incurs regret at ``beta``.

    ``delta_i = max(0, tau_i - V_ci(beta))`` and
    ``epsilon = V*(beta, tau - delta) - V_r(beta)``.
    """
    if solver is None:
        from .lp import solve_cmdp as solver
    b = check_distribution(beta, cmdp.n_states)
    cons = np.array([evaluate_policy(cmdp, policy, k).at(b) for k in range(cmdp.n_constraints)])
    delta = np.maximum(0.0, cmdp.thresholds - cons) if cmdp.n_constraints else np.zeros(0)
    sol = solver(cmdp, b, cmdp.thresholds - delta)
    if sol.status != "optimal":
        raise InfeasibleInstance(f"relaxed CMDP is {sol.status} at the given beta")
    v_pi = evaluate_policy(cmdp, policy, "reward").at(b)
    eps = sol.value - v_pi
    if eps < -1e-9 * (1.0 + abs(sol.value)):
        raise NumericalFailure(f"negative minimal regret {eps!r}: solver and evaluation disagree")
    return RegretPair(delta, float(eps))
