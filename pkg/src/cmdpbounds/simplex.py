"""Dense two-phase revised simplex with Bland's anti-cycling rule.

Solves ``max c @ x  s.t.  A @ x = b, x >= 0`` and returns a basic optimal
solution together with the simplex multipliers ``y = B^-T c_B``, which are
optimal for the dual ``min b @ y  s.t.  A.T @ y >= c``.

The basis inverse is kept explicitly and updated with a rank-one (eta)
update after each pivot; it is recomputed from scratch every
``refactor_every`` pivots to bound drift.  Intended for desk-scale dense
problems (a few thousand columns).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import NumericalFailure

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
STALL_LIMIT = 50


@dataclass
class SimplexResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]
    value: Optional[float]
    basis: Optional[np.ndarray]
    iterations: int


class _Tableau:
    """Basis bookkeeping over the column set ``[A | diag(sigma)]``."""

    def __init__(self, A, b, basis, sigma, refactor_every):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.basis = np.asarray(basis, dtype=int)
        self.sigma = sigma
        self.refactor_every = refactor_every
        self.since_refactor = 0
        self.refactor()

    def column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.A[:, j]
        col = np.zeros(self.m)
        col[j - self.n] = self.sigma[j - self.n]
        return col

    def basis_matrix(self) -> np.ndarray:
        B = np.empty((self.m, self.m))
        for k, j in enumerate(self.basis):
            B[:, k] = self.column(j)
        return B

    def refactor(self):
        try:
            self.Binv = np.linalg.inv(self.basis_matrix())
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("basis matrix became singular") from exc
        self.xB = self.Binv @ self.b
        self.since_refactor = 0

    def pivot(self, q: int, r: int, u: np.ndarray):
        piv = u[r]
        self.Binv[r] /= piv
        others = np.arange(self.m) != r
        self.Binv[others] -= np.outer(u[others], self.Binv[r])
        theta = self.xB[r] / piv
        self.xB[others] -= theta * u[others]
        self.xB[r] = theta
        self.basis[r] = q
        self.since_refactor += 1
        if self.since_refactor >= self.refactor_every:
            self.refactor()

    def run(self, cost: np.ndarray, allowed: np.ndarray, max_iter: int,
            pricing: str = "bland") -> tuple[str, int]:
        """Simplex iterations for ``max cost @ x``.

        ``cost`` and ``allowed`` cover all ``n + m`` columns; disallowed
        columns never enter.  With ``pricing="dantzig"`` the most positive
        reduced cost enters until ``STALL_LIMIT`` consecutive degenerate
        pivots occur, after which Bland's rule takes over until the
        objective moves again.  Returns ``("optimal" | "unbounded", iters)``.
        """
        n_total = self.n + self.m
        it = 0
        stall = 0
        while True:
            cB = cost[self.basis]
            y = cB @ self.Binv
            d = np.empty(n_total)
            d[: self.n] = cost[: self.n] - y @ self.A
            d[self.n:] = cost[self.n:] - y * self.sigma
            d[self.basis] = 0.0
            cand = np.flatnonzero((d > OPT_TOL) & allowed)
            if cand.size == 0:
                if self.since_refactor == 0:
                    return "optimal", it
                # confirm optimality against a fresh inverse
                self.refactor()
                continue
            if it >= max_iter:
                raise NumericalFailure(f"simplex did not converge in {max_iter} iterations")
            if pricing == "dantzig" and stall < STALL_LIMIT:
                q = int(cand[np.argmax(d[cand])])
            else:
                q = int(cand[0])
            u = self.Binv @ self.column(q)
            rows = np.flatnonzero(u > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded", it
            ratios = np.maximum(self.xB[rows], 0.0) / u[rows]
            best = ratios.min()
            stall = stall + 1 if best <= FEAS_TOL else 0
            ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
            r = int(ties[np.argmin(self.basis[ties])])
            self.pivot(q, r, u)
            it += 1


def revised_simplex(c, A, b, basis_hint: Optional[Sequence[int]] = None,
                    max_iter: int = 200_000, refactor_every: int = 50,
                    pricing: str = "bland") -> SimplexResult:
    """Maximize ``c @ x`` subject to ``A @ x = b``, ``x >= 0``.

    ``basis_hint`` is an optional crash basis: one entry per row holding a
    structural column index, or ``-1`` to place that row's artificial
    variable in the basis.  A hint that is singular or primal infeasible
    is silently replaced by the all-artificial basis.  ``pricing`` is
    ``"bland"`` (smallest-index entering column throughout) or
    ``"dantzig"`` (largest reduced cost, Bland's rule on degenerate stalls).
    """
    if pricing not in ("bland", "dantzig"):
        raise ValueError(f"unknown pricing rule {pricing!r}")
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    art = n + np.arange(m)

    tab = None
    if basis_hint is not None:
        hint = np.array([j if j >= 0 else n + i for i, j in enumerate(basis_hint)], dtype=int)
        if len(set(hint.tolist())) == m:
            try:
                tab = _Tableau(A, b, hint, np.ones(m), refactor_every)
            except NumericalFailure:
                tab = None
        if tab is not None:
            is_art = tab.basis >= n
            neg_art = is_art & (tab.xB < 0)
            if np.any(neg_art):
                rows = tab.basis[neg_art] - n
                tab.sigma[rows] = -1.0
                tab.refactor()
            if np.any(tab.xB[~is_art] < -FEAS_TOL):
                tab = None
    if tab is None:
        sigma = np.where(b < 0, -1.0, 1.0)
        tab = _Tableau(A, b, art.copy(), sigma, refactor_every)

    iters = 0
    allowed = np.ones(n + m, dtype=bool)
    if np.any(tab.basis >= n):
        cost1 = np.zeros(n + m)
        cost1[n:] = -1.0
        status, k = tab.run(cost1, allowed, max_iter, pricing)
        iters += k
        tab.refactor()
        infeas = float(np.sum(np.maximum(tab.xB[tab.basis >= n], 0.0)))
        if status != "optimal" or infeas > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return SimplexResult("infeasible", None, None, None, None, iters)
        # Drive zero-valued artificials out of the basis where possible.
        for r in np.flatnonzero(tab.basis >= n):
            row = tab.Binv[r] @ A
            row[tab.basis[tab.basis < n]] = 0.0
            cands = np.flatnonzero(np.abs(row) > 1e-7)
            if cands.size:
                q = int(cands[np.argmax(np.abs(row[cands]))])
                tab.pivot(q, int(r), tab.Binv @ A[:, q])
                iters += 1
        tab.refactor()

    allowed[n:] = False
    cost2 = np.concatenate([c, np.zeros(m)])
    status, k = tab.run(cost2, allowed, max_iter, pricing)
    iters += k
    if status == "unbounded":
        return SimplexResult("unbounded", None, None, None, None, iters)
    tab.refactor()
    x = np.zeros(n + m)
    x[tab.basis] = np.maximum(tab.xB, 0.0)
    y = cost2[tab.basis] @ tab.Binv
    return SimplexResult("optimal", x[:n], y, float(c @ x[:n]), tab.basis.copy(), iters)
