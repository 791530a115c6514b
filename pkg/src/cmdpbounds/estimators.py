"""scikit-learn style wrappers around the bound and regret-set routines.

Each estimator is configured with a :class:`~cmdpbounds.cmdp.Cmdp`, fitted on
the nominal start distribution (a single row, or nothing for the CMDP's own
``beta0``) and then predicts bounds for a batch of start distributions given
as the rows of ``X``::

    est = DualityBound(cmdp).fit()
    upper = est.predict(betas)
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bounds import (build_perturbation_context, concavity_lower_bound, concavity_upper_bound,
                     concavity_values, duality_upper_bound, perturbation_bounds)
from .cmdp import Cmdp
from .lp import extract_policy, solve_cmdp
from .regret import build_regret_polytope

SIMPLEX_TOL = 1e-9


def check_distributions(X, n_states: Optional[int] = None) -> np.ndarray:
    """Validate a batch of start distributions (one per row) and return it as a 2-D array."""
    X = check_array(X, ensure_2d=False, dtype=float)
    X = np.atleast_2d(X)
    if n_states is not None and X.shape[1] != n_states:
        raise ValueError(f"expected {n_states} columns, got {X.shape[1]}")
    if np.any(X < -SIMPLEX_TOL):
        raise ValueError("start distributions must be nonnegative")
    sums = X.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("every row must sum to one")
    X = np.clip(X, 0.0, None)
    return X / X.sum(axis=1, keepdims=True)


class _NominalMixin:
    def _check_cmdp(self) -> Cmdp:
        if not isinstance(self.cmdp, Cmdp):
            raise TypeError("cmdp must be a Cmdp instance")
        return self.cmdp

    def _fit_nominal(self, X):
        cmdp = self._check_cmdp()
        beta0 = cmdp.nominal_beta if X is None else check_distributions(X, cmdp.n_states)[0]
        self.nominal_ = solve_cmdp(cmdp, beta0, backend=self.backend).require_optimal()
        self.n_features_in_ = cmdp.n_states
        return self.nominal_


class DualityBound(_NominalMixin, BaseEstimator):
    """Upper bound ``beta1 @ W - (tau - delta) @ lam`` from the nominal dual pair."""

    def __init__(self, cmdp: Optional[Cmdp] = None, delta=None, backend: str = "simplex"):
        self.cmdp = cmdp
        self.delta = delta
        self.backend = backend

    def fit(self, X=None, y=None):
        self._fit_nominal(X)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "nominal_")
        B = check_distributions(X, self.n_features_in_)
        return np.array([duality_upper_bound(self.nominal_, b, self.delta).value for b in B])


class PerturbationBound(_NominalMixin, BaseEstimator):
    """Two-sided bound from the conditioning of the nominal basis."""

    def __init__(self, cmdp: Optional[Cmdp] = None, delta=None, backend: str = "simplex"):
        self.cmdp = cmdp
        self.delta = delta
        self.backend = backend

    def fit(self, X=None, y=None):
        nominal = self._fit_nominal(X)
        self.context_ = build_perturbation_context(self.cmdp, nominal)
        return self

    def _certs(self, X):
        check_is_fitted(self, "context_")
        B = check_distributions(X, self.n_features_in_)
        return [perturbation_bounds(self.context_, self.nominal_.beta, b, self.delta) for b in B]

    def predict(self, X) -> np.ndarray:
        return np.array([up.value for up, _ in self._certs(X)])

    def predict_lower(self, X) -> np.ndarray:
        """Lower bounds; NaN when a constraint relaxation is in effect."""
        return np.array([np.nan if lo is None else lo.value for _, lo in self._certs(X)])


class ConcavityBound(BaseEstimator):
    """Bounds from the values at the uniform start and at every point-mass start.

    Fitting performs ``|S| + 1`` solves and ignores ``X``.
    """

    def __init__(self, cmdp: Optional[Cmdp] = None, backend: str = "simplex"):
        self.cmdp = cmdp
        self.backend = backend

    def fit(self, X=None, y=None):
        if not isinstance(self.cmdp, Cmdp):
            raise TypeError("cmdp must be a Cmdp instance")
        self.values_ = concavity_values(self.cmdp, None, backend=self.backend)
        self.n_features_in_ = self.cmdp.n_states
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "values_")
        B = check_distributions(X, self.n_features_in_)
        return np.array([concavity_upper_bound(self.cmdp, b, values=self.values_).value for b in B])

    def predict_lower(self, X) -> np.ndarray:
        check_is_fitted(self, "values_")
        B = check_distributions(X, self.n_features_in_)
        return np.array([concavity_lower_bound(self.cmdp, b, values=self.values_).value for b in B])


class RegretSetClassifier(_NominalMixin, ClassifierMixin, BaseEstimator):
    """Classifies start distributions as certified members of a (delta, eps)-regret set.

    ``fit`` solves at the nominal start, extracts the optimal policy (unless
    one is supplied) and builds the inner-approximation polytope.
    ``predict`` returns 1 for certified members and 0 otherwise; a 0 is
    inconclusive rather than a proof of non-membership.
    """

    def __init__(self, cmdp: Optional[Cmdp] = None, epsilon: float = 0.01, delta=None,
                 policy=None, backend: str = "simplex"):
        self.cmdp = cmdp
        self.epsilon = epsilon
        self.delta = delta
        self.policy = policy
        self.backend = backend

    def fit(self, X=None, y=None):
        nominal = self._fit_nominal(X)
        self.policy_ = self.policy if self.policy is not None else extract_policy(nominal, self.cmdp)
        self.polytope_ = build_regret_polytope(self.cmdp, self.policy_, nominal, self.epsilon, self.delta)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        """Smallest row slack ``min_k (G beta - g)_k``; nonnegative inside the polytope."""
        check_is_fitted(self, "polytope_")
        B = check_distributions(X, self.n_features_in_)
        return self.polytope_.slack(B).min(axis=1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "polytope_")
        B = check_distributions(X, self.n_features_in_)
        return self.polytope_.contains(B).astype(int)
