"""Bounds on how the optimal value of a constrained MDP moves with its start distribution.

One nominal LP solve yields certified upper and lower bounds on the optimal
value at other start distributions, inner approximations of regret sets,
and robust minimal-regret brackets for a fixed policy.
"""
from .bounds import (BoundCertificate, build_perturbation_context, concavity_lower_bound,
                     concavity_upper_bound, duality_upper_bound, perturbation_bounds,
                     relative_looseness)
from .cmdp import (Cmdp, Policy, RegretPair, ValueVector, evaluate_policy, load_cmdp,
                   minimal_regret, policy_value, save_cmdp, validate_cmdp)
from .environments import (PendulumConfig, RandomCmdpConfig, build_pendulum_cmdp,
                           generate_random_cmdp, named_distributions, sample_beta_in_tv_bin,
                           tv_distance)
from .estimators import ConcavityBound, DualityBound, PerturbationBound, RegretSetClassifier
from .lp import LpSolution, build_lp, extract_policy, solve_cmdp
from .regret import (RegretPolytope, UncertaintySet, build_regret_polytope, hit_rate, membership,
                     min_regret_hpolytope, min_regret_sampled_lower, min_regret_vertices)

__version__ = "0.1.0"

__all__ = [
    "BoundCertificate", "Cmdp", "ConcavityBound", "DualityBound", "LpSolution",
    "PendulumConfig", "PerturbationBound", "Policy", "RandomCmdpConfig", "RegretPair",
    "RegretPolytope", "RegretSetClassifier", "UncertaintySet", "ValueVector", "build_lp",
    "build_pendulum_cmdp", "build_perturbation_context", "build_regret_polytope",
    "concavity_lower_bound", "concavity_upper_bound", "duality_upper_bound", "evaluate_policy",
    "extract_policy", "generate_random_cmdp", "hit_rate", "load_cmdp", "membership",
    "min_regret_hpolytope", "min_regret_sampled_lower", "min_regret_vertices", "minimal_regret",
    "named_distributions", "perturbation_bounds", "policy_value", "relative_looseness",
    "sample_beta_in_tv_bin", "save_cmdp", "solve_cmdp", "tv_distance", "validate_cmdp",
]
