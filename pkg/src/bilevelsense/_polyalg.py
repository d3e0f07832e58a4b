"""Low-level polyhedral helpers shared by the multiplier and CQ machinery.

Everything here works on standard-form systems {w >= 0 : A w = b} small
enough that exhaustive basic-solution enumeration is the most reliable
vertex oracle available: desk-scale row counts never exceed m + 2 <= 4.
"""

from __future__ import annotations

from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import BudgetError


def _ncr_total(n, r):
    total = 0
    c = 1
    for k in range(r + 1):
        total += c
        c = c * (n - k) // (k + 1) if n > k else 0
    return total


def basic_vertices(A: np.ndarray, b: np.ndarray, max_bases: int = 300000,
                   res_tol: Optional[float] = None):
    """All vertices of {w >= 0 : A w = b} by basic-solution enumeration.

    A vertex's support indexes linearly independent columns, so scanning
    independent column subsets of size <= n_rows finds every vertex (plus
    possibly some non-extreme feasible points, which is harmless for the
    hull-level consumers).  res_tol relaxes the residual acceptance (scaled
    by the data magnitude); callers working from grid-snapped points pass
    their grid blur here.
    """
    n_rows, n_cols = A.shape
    scale = 1.0 + float(np.max(np.abs(A), initial=0.0)) + float(
        np.max(np.abs(b), initial=0.0))
    res_tol = (1e-9 if res_tol is None else res_tol) * scale
    if _ncr_total(n_cols, min(n_rows, n_cols)) > max_bases:
        raise BudgetError("basis enumeration bound exceeded")
    out = []
    seen = set()
    zero = np.zeros(n_cols)
    if np.max(np.abs(b), initial=0.0) <= res_tol:
        out.append(zero.copy())
        seen.add(tuple(np.round(zero, 11)))
    for size in range(1, min(n_rows, n_cols) + 1):
        for J in combinations(range(n_cols), size):
            AJ = A[:, J]
            if np.linalg.matrix_rank(AJ, tol=1e-10 * scale) < size:
                continue
            if size == n_rows:
                try:
                    wJ = np.linalg.solve(AJ, b)
                    wJ += np.linalg.solve(AJ, b - AJ @ wJ)  # one refinement step
                except np.linalg.LinAlgError:
                    continue
            else:
                wJ, *_ = np.linalg.lstsq(AJ, b, rcond=None)
            if np.min(wJ) < -1e-10 * scale:
                continue
            if np.max(np.abs(AJ @ wJ - b)) > res_tol:
                continue
            w = np.zeros(n_cols)
            w[list(J)] = np.clip(wJ, 0.0, None)
            key = tuple(np.round(w, 11))
            if key not in seen:
                seen.add(key)
                out.append(w)
    return out


def standard_vrep(A: np.ndarray, b: np.ndarray, max_bases: int = 300000,
                  res_tol: Optional[float] = None):
    """(vertices, rays) of {w >= 0 : A w = b}.

    Rays come from the normalized recession system {A w = 0, sum w = 1}.
    """
    verts = basic_vertices(A, b, max_bases, res_tol)
    aug = np.vstack([A, np.ones(A.shape[1])])
    b_aug = np.concatenate([np.zeros(A.shape[0]), [1.0]])
    rays = [r for r in basic_vertices(aug, b_aug, max_bases)
            if np.max(np.abs(r)) > 0]
    if not verts:
        return [], []
    return verts, rays


class LPBuilder:
    """Tiny indexed LP front end over scipy's HiGHS solver.

    Supports hard equality rows, soft rows |row - rhs| <= t with t the
    minimax objective, and plain linear objectives.  Deterministic by
    construction (fixed variable and row order).
    """

    def __init__(self):
        self.lb: list = []
        self.ub: list = []
        self.eq_rows: list = []
        self.eq_rhs: list = []
        self.soft_rows: list = []
        self.soft_rhs: list = []
        self.le_rows: list = []
        self.le_rhs: list = []

    def var(self, lb=0.0, ub=None) -> int:
        self.lb.append(lb)
        self.ub.append(ub)
        return len(self.lb) - 1

    def vars(self, count, lb=0.0, ub=None):
        return [self.var(lb, ub) for _ in range(count)]

    def eq(self, coeffs: dict, rhs: float):
        self.eq_rows.append(dict(coeffs))
        self.eq_rhs.append(float(rhs))

    def soft(self, coeffs: dict, rhs: float):
        self.soft_rows.append(dict(coeffs))
        self.soft_rhs.append(float(rhs))

    def le(self, coeffs: dict, rhs: float):
        self.le_rows.append(dict(coeffs))
        self.le_rhs.append(float(rhs))

    def _dense(self, rows):
        n = len(self.lb)
        out = np.zeros((len(rows), n))
        for r, coeffs in enumerate(rows):
            for j, c in coeffs.items():
                out[r, j] = c
        return out

    def minimize_max_violation(self):
        """Returns (optimal t, solution w) or (None, None) if infeasible."""
        n = len(self.lb)
        c = np.zeros(n + 1)
        c[n] = 1.0  # t appended last
        bounds = list(zip(self.lb, self.ub)) + [(0.0, None)]
        A_eq = None
        b_eq = None
        if self.eq_rows:
            A_eq = np.hstack([self._dense(self.eq_rows), np.zeros((len(self.eq_rows), 1))])
            b_eq = np.array(self.eq_rhs)
        blocks = []
        rhs = []
        if self.soft_rows:
            S = self._dense(self.soft_rows)
            ones = np.ones((len(self.soft_rows), 1))
            blocks.append(np.hstack([S, -ones]))
            rhs.extend(self.soft_rhs)
            blocks.append(np.hstack([-S, -ones]))
            rhs.extend([-v for v in self.soft_rhs])
        if self.le_rows:
            L = self._dense(self.le_rows)
            blocks.append(np.hstack([L, np.zeros((len(self.le_rows), 1))]))
            rhs.extend(self.le_rhs)
        A_ub = np.vstack(blocks) if blocks else None
        b_ub = np.array(rhs) if blocks else None
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if not res.success:
            return None, None
        return float(res.x[-1]), res.x[:-1]

    def maximize(self, coeffs: dict):
        """Returns (optimal value, solution) or (None, None)."""
        n = len(self.lb)
        c = np.zeros(n)
        for j, v in coeffs.items():
            c[j] = -v
        A_eq = self._dense(self.eq_rows) if self.eq_rows else None
        b_eq = np.array(self.eq_rhs) if self.eq_rows else None
        A_ub = self._dense(self.le_rows) if self.le_rows else None
        b_ub = np.array(self.le_rhs) if self.le_rows else None
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=list(zip(self.lb, self.ub)), method="highs")
        if not res.success:
            return None, None
        return -float(res.fun), res.x


def simplex_grid(k: int, steps: int):
    """Lattice points of the (k-1)-simplex with the given subdivision."""
    if k == 1:
        return [np.array([1.0])]
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(np.array(prefix + [remaining]) / steps)
            return
        for take in range(remaining + 1):
            rec(prefix + [take], remaining - take, slots - 1)

    rec([], steps, k)
    return out
