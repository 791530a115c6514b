"""Benchmark CMDP generators: random instances and the discretized water pendulum."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cmdp import Cmdp, Policy, evaluate_policy, validate_cmdp
from .exceptions import EmptyBin, WrongEnvironment


@dataclass(frozen=True)
class RandomCmdpConfig:
    n_states: int = 20
    n_actions: int = 3
    n_constraints: int = 2
    prune_fraction: float = 0.5
    reward_range: tuple = (0.0, 1.0)
    util_range: tuple = (0.0, 1.0)
    threshold_quantile: float = 0.5
    gamma: float = 0.9
    seed: int = 0
    threshold_rule: str = "mix"
    threshold_mix: float = 0.5

    def __post_init__(self):
        if self.threshold_rule not in ("mix", "quantile"):
            raise ValueError("threshold_rule must be 'mix' or 'quantile'")
        if not 0.0 <= self.threshold_mix <= 1.0:
            raise ValueError("threshold_mix must lie in [0, 1]")
        if min(self.n_states, self.n_actions) < 1 or self.n_constraints < 0:
            raise ValueError("n_states and n_actions must be positive, n_constraints nonnegative")
        if not 0.0 <= self.prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie in [0, 1)")
        if not 0.0 < self.threshold_quantile < 1.0:
            raise ValueError("threshold_quantile must lie in (0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "RandomCmdpConfig":
        d = dict(d)
        for key in ("reward_range", "util_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _relaxed(q: np.ndarray, scale: float = 0.9) -> np.ndarray:
    # pull toward -inf by (1 - scale)|q| so the threshold is easier regardless of sign
    return q - (1.0 - scale) * np.abs(q)


def _mix_thresholds(base: Cmdp, config: RandomCmdpConfig) -> np.ndarray:
    """Constraint values of a blend of the reward- and utility-optimal policies.

    The blend puts weight ``1 - threshold_mix`` on the unconstrained optimal
    occupation measure at the uniform start and splits ``threshold_mix``
    evenly over the K utility-maximizing ones.  Thresholds sit 1% (of the
    utility range times the horizon) below the blend's values, so the
    uniform start is strictly feasible while the unconstrained optimum
    typically violates them.
    """
    from .lp import greedy_policy_iteration

    S, A, K = base.n_states, base.n_actions, base.n_constraints
    beta = np.full(S, 1.0 / S)
    policies = [greedy_policy_iteration(base)]
    policies += [greedy_policy_iteration(base, base.constraint_utils[k]) for k in range(K)]
    weights = [1.0 - config.threshold_mix] + [config.threshold_mix / K] * K
    values = np.zeros(K)
    for w, actions in zip(weights, policies):
        pi = Policy.deterministic(actions, A)
        values += w * np.array([evaluate_policy(base, pi, k).at(beta) for k in range(K)])
    lo, hi = config.util_range
    margin = 0.01 * (hi - lo) / (1.0 - config.gamma)
    return values - margin


def generate_random_cmdp(config: RandomCmdpConfig) -> Cmdp:
    """Random CMDP with pruned transitions and sampled rewards and utilities.

    With ``threshold_rule="mix"`` (default) thresholds come from
    :func:`_mix_thresholds`.  With ``"quantile"`` they are ``0.9 *
    quantile(V_ci)`` of each constraint's value vector under the
    unconstrained optimal policy.
    """
    from .lp import greedy_policy_iteration

    S, A, K = config.n_states, config.n_actions, config.n_constraints
    rng = np.random.default_rng(config.seed)
    weights = rng.uniform(0.0, 1.0, size=(A, S, S))
    n_keep = max(1, S - int(round(config.prune_fraction * S)))
    if n_keep < S:
        keys = rng.random((A, S, S))
        rank = np.argsort(np.argsort(keys, axis=1), axis=1)
        weights = np.where(rank < n_keep, weights, 0.0)
    # a zero draw on every survivor is measure-zero, but keep the column stochastic anyway
    dead = weights.sum(axis=1) == 0.0
    if dead.any():
        a_idx, s_idx = np.nonzero(dead)
        weights[a_idx, s_idx, s_idx] = 1.0
    T = weights / weights.sum(axis=1, keepdims=True)

    reward = rng.uniform(*config.reward_range, size=(S, A))
    utils = rng.uniform(*config.util_range, size=(K, S, A))
    base = validate_cmdp({"transitions": T, "reward": reward, "constraints": utils,
                          "thresholds": np.zeros(K), "gamma": config.gamma})
    if K and config.threshold_rule == "mix":
        tau = _mix_thresholds(base, config)
    elif K:
        pi = Policy.deterministic(greedy_policy_iteration(base), A)
        q = np.array([np.quantile(evaluate_policy(base, pi, k).values, config.threshold_quantile)
                      for k in range(K)])
        tau = _relaxed(q)
    else:
        tau = np.zeros(0)
    meta = {"env": "random", "config": dataclasses.asdict(config)}
    return validate_cmdp({"transitions": T, "reward": reward, "constraints": utils,
                          "thresholds": tau, "gamma": config.gamma, "meta": meta})


@dataclass(frozen=True)
class PendulumConfig:
    n_theta_bins: int = 50
    n_thetadot_bins: int = 50
    n_torque_levels: int = 7
    samples_per_bin: int = 100
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    dt: float = 0.05
    torque_max: float = 2.0
    thetadot_max: float = 8.0
    gamma: float = 0.99
    submersion_threshold: float = -45.0
    energy_threshold: float = -50.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_theta_bins, self.n_thetadot_bins, self.n_torque_levels,
               self.samples_per_bin) < 1:
            raise ValueError("bin counts and samples_per_bin must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "PendulumConfig":
        return cls(**d)

    @property
    def n_states(self) -> int:
        return self.n_theta_bins * self.n_thetadot_bins

    def torques(self) -> np.ndarray:
        if self.n_torque_levels == 1:
            return np.zeros(1)
        return np.linspace(-self.torque_max, self.torque_max, self.n_torque_levels)

    def theta_edges(self) -> np.ndarray:
        return np.linspace(-math.pi, math.pi, self.n_theta_bins + 1)

    def thetadot_edges(self) -> np.ndarray:
        return np.linspace(-self.thetadot_max, self.thetadot_max, self.n_thetadot_bins + 1)

    def bin_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-state ``(theta_c, thetadot_c)``; state index is ``i_theta * n_thetadot + i_dot``."""
        te, ve = self.theta_edges(), self.thetadot_edges()
        tc = 0.5 * (te[:-1] + te[1:])
        vc = 0.5 * (ve[:-1] + ve[1:])
        return np.repeat(tc, self.n_thetadot_bins), np.tile(vc, self.n_theta_bins)

    def state_index(self, theta, thetadot) -> np.ndarray:
        """Bin index of ``(theta, thetadot)``; theta bins are right-closed on (-pi, pi]."""
        w = 2.0 * math.pi / self.n_theta_bins
        it = np.clip(np.ceil((np.asarray(theta) + math.pi) / w).astype(int) - 1,
                     0, self.n_theta_bins - 1)
        wv = 2.0 * self.thetadot_max / self.n_thetadot_bins
        iv = np.clip(np.floor((np.asarray(thetadot) + self.thetadot_max) / wv).astype(int),
                     0, self.n_thetadot_bins - 1)
        return it * self.n_thetadot_bins + iv


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    out = np.mod(np.asarray(theta) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(out <= -math.pi, out + 2.0 * math.pi, out)


def pendulum_acceleration(theta, torque, config: PendulumConfig):
    """Angular acceleration; buoyancy halves gravity once ``|theta| >= pi/2``."""
    theta = np.asarray(theta, dtype=float)
    g_coef = np.where(np.abs(theta) >= math.pi / 2, 1.5, 3.0)
    return (g_coef * (config.gravity / config.length) * np.sin(theta)
            + 3.0 / (config.mass * config.length ** 2) * np.asarray(torque))


def pendulum_step(theta, thetadot, torque, config: PendulumConfig):
    """One semi-implicit Euler step with velocity clipping and angle wraparound."""
    acc = pendulum_acceleration(theta, torque, config)
    v_next = np.clip(thetadot + acc * config.dt, -config.thetadot_max, config.thetadot_max)
    return wrap_angle(theta + v_next * config.dt), v_next


def pendulum_reward(theta, thetadot):
    return -(np.asarray(theta) ** 2 + 0.1 * np.asarray(thetadot) ** 2)


def build_pendulum_cmdp(config: PendulumConfig) -> Cmdp:
    """Discretize the water pendulum by Monte-Carlo forward simulation.

    Each (state bin, torque) pair simulates ``samples_per_bin`` uniformly
    drawn points for one step and counts the landing bins.  Rewards and
    utilities are evaluated at bin centers.
    """
    S, A, n = config.n_states, config.n_torque_levels, config.samples_per_bin
    rng = np.random.default_rng(config.seed)
    te, ve = config.theta_edges(), config.thetadot_edges()
    it = np.repeat(np.arange(config.n_theta_bins), config.n_thetadot_bins)
    iv = np.tile(np.arange(config.n_thetadot_bins), config.n_theta_bins)
    torques = config.torques()

    T = np.zeros((A, S, S))
    cols = np.arange(S)
    for a, u in enumerate(torques):
        th = rng.uniform(te[it][:, None], te[it + 1][:, None], size=(S, n))
        vd = rng.uniform(ve[iv][:, None], ve[iv + 1][:, None], size=(S, n))
        th2, vd2 = pendulum_step(th, vd, u, config)
        dest = config.state_index(th2, vd2)
        np.add.at(T[a], (dest.ravel(), np.repeat(cols, n)), 1.0)
    T /= n

    tc, vc = config.bin_centers()
    reward = np.repeat(pendulum_reward(tc, vc)[:, None], A, axis=1)
    submerged = np.where(np.abs(tc) >= math.pi / 2, -1.0, 0.0)
    utils = np.stack([
        np.repeat(submerged[:, None], A, axis=1),
        np.tile(-0.25 * torques[None, :] ** 2, (S, 1)),
    ])
    meta = {"env": "pendulum", "config": dataclasses.asdict(config)}
    return validate_cmdp({
        "transitions": T, "reward": reward, "constraints": utils,
        "thresholds": [config.submersion_threshold, config.energy_threshold],
        "gamma": config.gamma, "meta": meta,
    })


def pendulum_config_of(cmdp: Cmdp) -> PendulumConfig:
    if cmdp.meta.get("env") != "pendulum":
        raise WrongEnvironment("CMDP was not built by build_pendulum_cmdp")
    return PendulumConfig.from_dict(cmdp.meta["config"])


def named_distributions(cmdp: Cmdp, kind: str, spread: float = 0.3) -> np.ndarray:
    """Start distributions for the pendulum: ``"top"``, ``"bottom"`` or ``"uniform"``.

    Top/Bottom put a Gaussian bump (std ``spread`` radians in theta, scaled
    to the velocity range in thetadot) around the upright / hanging state
    at rest.  ``spread=0`` places all mass in the single containing bin.
    """
    cfg = pendulum_config_of(cmdp)
    kind = kind.lower()
    S = cmdp.n_states
    if kind == "uniform":
        return np.full(S, 1.0 / S)
    if kind not in ("top", "bottom"):
        raise ValueError(f"unknown distribution kind {kind!r}")
    center = 0.0 if kind == "top" else math.pi
    if spread <= 0:
        beta = np.zeros(S)
        beta[int(cfg.state_index(center, 0.0))] = 1.0
        return beta
    tc, vc = cfg.bin_centers()
    dtheta = wrap_angle(tc - center)
    v_spread = spread * cfg.thetadot_max / math.pi
    logw = -0.5 * (dtheta / spread) ** 2 - 0.5 * (vc / v_spread) ** 2
    w = np.exp(logw - logw.max())
    return w / w.sum()


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


CONCENTRATION_SCHEDULE = (1.0, 0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 2.0, 5.0, 20.0)


def sample_beta_in_tv_bin(n_states: int, tv_lo: float, tv_hi: float,
                          reference: Optional[Sequence[float]] = None,
                          rng_seed=0, max_draws: int = 10_000) -> np.ndarray:
    """Draw a distribution whose TV distance from ``reference`` lies in ``[tv_lo, tv_hi]``.

    Dirichlet rejection sampling cycles through a fixed concentration
    schedule.  After ``max_draws`` rejections it falls back to moving from
    the reference toward the farthest simplex vertex.
    """
    ref = np.full(n_states, 1.0 / n_states) if reference is None else np.asarray(reference, float)
    if not 0.0 <= tv_lo <= tv_hi <= 1.0:
        raise ValueError("need 0 <= tv_lo <= tv_hi <= 1")
    tv_max = 1.0 - ref.min()
    if tv_lo > tv_max:
        raise EmptyBin(f"tv_lo={tv_lo} exceeds the largest distance {tv_max} from the reference")
    if tv_hi == 0.0:
        return ref.copy()
    rng = np.random.default_rng(rng_seed)
    for k in range(max_draws):
        conc = CONCENTRATION_SCHEDULE[k % len(CONCENTRATION_SCHEDULE)]
        beta = rng.dirichlet(np.full(n_states, conc))
        if tv_lo <= tv_distance(beta, ref) <= tv_hi:
            return beta
    vertex = np.zeros(n_states)
    vertex[int(np.argmin(ref))] = 1.0
    target = rng.uniform(tv_lo, min(tv_hi, tv_max))
    return ref + (target / tv_max) * (vertex - ref)
