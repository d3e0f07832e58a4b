"""Grid evaluation of the lower-level and two-level value functions.

phi(x) is the lower-level optimum over the feasible y-grid, phi_o / phi_p
the best / worst upper-level objective over the near-optimal band S(x).
A coarse sweep over the y-box is refined multiplicatively around
incumbents (cell size / 10 per level), which at desk scale gives
oracle-grade values without an NLP solver.  All reductions are
deterministic: ties break toward the lexicographically smallest y.

The pessimistic value is computed as minus the optimistic value of the
program with the upper objective negated, so the defining identity between
the two holds to the last bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import InfeasibleError, UnsupportedDimensionError
from .model import BilevelProgram, eval_expr

DEFAULT_TOL_VAL_BASE = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Grid-search resolution parameters.

    refine_points = 21 with a +-1-cell window shrinks the cell size by
    exactly 10 per refinement level.
    """

    points_per_dim: int = 201
    refine_depth: int = 3
    tol_feas: float = 1e-9
    refine_points: int = 21
    max_seeds: int = 5

    def __post_init__(self):
        if self.points_per_dim < 3:
            raise ValueError("points_per_dim must be >= 3")
        if self.refine_depth < 0:
            raise ValueError("refine_depth must be >= 0")

    def coarse_cell(self, box_y) -> float:
        return max(
            (hi - lo) / (self.points_per_dim - 1) for lo, hi in box_y
        )

    def finest_cell(self, box_y) -> float:
        return self.coarse_cell(box_y) * 10.0 ** (-self.refine_depth)


@dataclass(frozen=True)
class SolutionSet:
    """Finite point cloud standing in for a solution map at one x."""

    points: Tuple[Tuple[float, ...], ...]
    value: float
    tol_val: float
    finest_cell: float

    def __len__(self):
        return len(self.points)

    def arrays(self):
        return [np.array(p) for p in self.points]


def default_tol_val(value: float) -> float:
    return DEFAULT_TOL_VAL_BASE * (1.0 + abs(value))


def _mesh(box, count):
    axes = [np.linspace(lo, hi, count) for lo, hi in box]
    if len(axes) == 1:
        return axes[0].reshape(-1, 1)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _feasible(prog: BilevelProgram, x, ypts: np.ndarray, tol_feas: float):
    if ypts.size == 0:
        return ypts
    ycols = [ypts[:, j] for j in range(prog.m)]
    mask = np.ones(len(ypts), dtype=bool)
    for gi in prog.g:
        vals = np.asarray(eval_expr(gi, x, ycols), dtype=float)
        vals = np.broadcast_to(vals, (len(ypts),))
        mask &= vals <= tol_feas
    return ypts[mask]


def _eval_on(prog_expr, x, ypts: np.ndarray, m: int):
    ycols = [ypts[:, j] for j in range(m)]
    vals = np.asarray(eval_expr(prog_expr, x, ycols), dtype=float)
    return np.broadcast_to(vals, (len(ypts),)).copy()


def _lex_order(ypts: np.ndarray):
    return np.lexsort(tuple(ypts[:, j] for j in range(ypts.shape[1] - 1, -1, -1)))


def _pool_key_sort(ypts, fvals):
    """Stable order by (f, lexicographic y) for deterministic reductions."""
    order = _lex_order(ypts)
    order = order[np.argsort(fvals[order], kind="stable")]
    return order


@lru_cache(maxsize=2048)
def _solve_lower(prog: BilevelProgram, x_key: Tuple[float, ...], grid: GridSpec):
    """Sweep + refine the lower level at x.

    Returns (phi, pool_y (k, m), pool_f (k,), pool_F (k,)); every pooled
    point is feasible within tol_feas.  Cached: treat arrays as read-only.
    """
    x = list(x_key)
    level_cell = np.array([
        (hi - lo) / (grid.points_per_dim - 1) for lo, hi in prog.box_y
    ])
    pts = _feasible(prog, x, _mesh(prog.box_y, grid.points_per_dim), grid.tol_feas)
    if len(pts) == 0:
        raise InfeasibleError(f"no feasible lower-level point at x={x}")
    fvals = _eval_on(prog.f, x, pts, prog.m)
    Fvals = _eval_on(prog.F, x, pts, prog.m)

    pool_y, pool_f, pool_F = pts, fvals, Fvals
    for _level in range(grid.refine_depth):
        seeds = _refine_seeds(pool_y, pool_f, pool_F, grid)
        new_parts = []
        for seed in seeds:
            window = [
                (
                    max(prog.box_y[j][0], seed[j] - level_cell[j]),
                    min(prog.box_y[j][1], seed[j] + level_cell[j]),
                )
                for j in range(prog.m)
            ]
            cand = _feasible(prog, x, _mesh(window, grid.refine_points),
                             grid.tol_feas)
            if len(cand):
                new_parts.append(cand)
        if new_parts:
            extra = np.vstack(new_parts)
            pool_y = np.vstack([pool_y, extra])
            pool_f = np.concatenate([pool_f, _eval_on(prog.f, x, extra, prog.m)])
            pool_F = np.concatenate([pool_F, _eval_on(prog.F, x, extra, prog.m)])
        level_cell = level_cell / 10.0

    phi = float(np.min(pool_f))
    return phi, pool_y, pool_f, pool_F


def _refine_seeds(pool_y, pool_f, pool_F, grid: GridSpec):
    """Deterministic refinement seeds: best-f incumbents plus the
    upper-objective extremes inside the current optimality band."""
    phi = float(np.min(pool_f))
    order = _pool_key_sort(pool_y, pool_f)
    seeds = []

    def push(point):
        for s in seeds:
            if np.max(np.abs(s - point)) < 1e-15:
                return
        seeds.append(point.copy())

    for idx in order[: grid.max_seeds]:
        push(pool_y[idx])
    band = pool_f <= phi + default_tol_val(phi)
    if np.any(band):
        band_idx = np.nonzero(band)[0]
        sub_order = band_idx[_lex_order(pool_y[band_idx])]
        fmin_idx = sub_order[np.argmin(pool_F[sub_order])]
        fmax_idx = sub_order[np.argmax(pool_F[sub_order])]
        push(pool_y[fmin_idx])
        push(pool_y[fmax_idx])
    return seeds


def lower_value(prog: BilevelProgram, x, grid: GridSpec = GridSpec()) -> float:
    """phi(x): lower-level optimal value over the gridded feasible set."""
    phi, *_ = _solve_lower(prog, _xkey(x), grid)
    return phi


def _xkey(x):
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


def _dedup_points(points: np.ndarray, keys: np.ndarray, resolution: float):
    """Greedy dedup at the given spatial resolution, best key first."""
    order = keys.argsort(kind="stable")
    kept: list = []
    for idx in order:
        p = points[idx]
        if all(np.max(np.abs(p - q)) > resolution for q in kept):
            kept.append(p)
    return kept


def lower_solutions(
    prog: BilevelProgram,
    x,
    grid: GridSpec = GridSpec(),
    tol_val: Optional[float] = None,
) -> SolutionSet:
    """S(x): feasible grid points whose f-value is within tol_val of phi(x)."""
    phi, pool_y, pool_f, _ = _solve_lower(prog, _xkey(x), grid)
    band_tol = default_tol_val(phi) if tol_val is None else float(tol_val)
    mask = pool_f <= phi + band_tol
    pts = pool_y[mask]
    keys = pool_f[mask]
    order = _pool_key_sort(pts, keys)
    cell = grid.finest_cell(prog.box_y)
    kept = _dedup_points(pts[order], np.arange(len(order), dtype=float), cell * 0.999)
    return SolutionSet(
        tuple(tuple(p.tolist()) for p in kept), phi, band_tol, cell
    )


def optimistic_value(prog: BilevelProgram, x, grid: GridSpec = GridSpec()) -> float:
    """phi_o(x) = min F(x, .) over the near-optimal lower-level band."""
    phi, pool_y, pool_f, pool_F = _solve_lower(prog, _xkey(x), grid)
    mask = pool_f <= phi + default_tol_val(phi)
    return float(np.min(pool_F[mask]))


def pessimistic_value(prog: BilevelProgram, x, grid: GridSpec = GridSpec()) -> float:
    """phi_p(x) = max F over the band, computed as -phi_o of the negated
    program so the sign identity between the two models is exact."""
    return -optimistic_value(prog.negated_upper(), x, grid)


def pessimistic_value_direct(prog: BilevelProgram, x,
                             grid: GridSpec = GridSpec()) -> float:
    """Direct max over the band; cross-check path for the sign identity."""
    phi, pool_y, pool_f, pool_F = _solve_lower(prog, _xkey(x), grid)
    mask = pool_f <= phi + default_tol_val(phi)
    return float(np.max(pool_F[mask]))


def optimistic_solutions(
    prog: BilevelProgram,
    x,
    grid: GridSpec = GridSpec(),
    tol_val: Optional[float] = None,
) -> SolutionSet:
    """S_o(x): members of S(x) whose upper objective is near phi_o(x)."""
    phi, pool_y, pool_f, pool_F = _solve_lower(prog, _xkey(x), grid)
    band_mask = pool_f <= phi + default_tol_val(phi)
    pts = pool_y[band_mask]
    Fb = pool_F[band_mask]
    phi_o = float(np.min(Fb))
    band_tol = default_tol_val(phi_o) if tol_val is None else float(tol_val)
    sel = Fb <= phi_o + band_tol
    pts = pts[sel]
    order = _pool_key_sort(pts, Fb[sel])
    cell = grid.finest_cell(prog.box_y)
    kept = _dedup_points(pts[order], np.arange(len(order), dtype=float), cell * 0.999)
    return SolutionSet(
        tuple(tuple(p.tolist()) for p in kept), phi_o, band_tol, cell
    )


def pessimistic_solutions(
    prog: BilevelProgram,
    x,
    grid: GridSpec = GridSpec(),
    tol_val: Optional[float] = None,
) -> SolutionSet:
    """Worst-case solution set: the optimistic one of the negated program."""
    sol = optimistic_solutions(prog.negated_upper(), x, grid, tol_val)
    return SolutionSet(sol.points, -sol.value, sol.tol_val, sol.finest_cell)


def value_function(
    prog: BilevelProgram, which: str, grid: GridSpec = GridSpec()
) -> Callable:
    """Callable x -> value for 'phi', 'phi_o' or 'phi_p'; raises
    InfeasibleError outside dom phi (the fd oracle skips those samples)."""
    if which == "phi":
        return lambda x: lower_value(prog, x, grid)
    if which == "phi_o":
        return lambda x: optimistic_value(prog, x, grid)
    if which == "phi_p":
        return lambda x: pessimistic_value(prog, x, grid)
    raise ValueError(f"unknown value function {which!r}")


# -- curve tabulation ---------------------------------------------------------


@dataclass(frozen=True)
class CurveRow:
    x: Tuple[float, ...]
    value: float
    status: str


def sample_curve(
    prog: BilevelProgram,
    which: str,
    grid: GridSpec = GridSpec(),
    x_range: Optional[Tuple[float, float, int]] = None,
    points_per_axis: int = 41,
):
    """Tabulate phi / phi_o / phi_p over an x-grid (n <= 2).

    Infeasible x's produce flagged rows rather than failing the sweep.
    """
    if prog.n > 2:
        raise UnsupportedDimensionError("curve tabulation supports n <= 2 only")
    h = value_function(prog, which, grid)
    if prog.n == 1:
        lo, hi = prog.box_x[0]
        count = points_per_axis
        if x_range is not None:
            lo, hi, count = x_range
        xs = [(float(v),) for v in np.linspace(lo, hi, int(count))]
    else:
        axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in prog.box_x]
        xs = [(float(a), float(b)) for a in axes[0] for b in axes[1]]
    rows = []
    for xv in xs:
        try:
            rows.append(CurveRow(xv, h(list(xv)), "ok"))
        except InfeasibleError:
            rows.append(CurveRow(xv, float("nan"), "infeasible"))
    return rows


def curve_to_csv(rows, n: int) -> str:
    """CSV with IEEE-754 shortest round-trip decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["x1"] + (["x2"] if n == 2 else []) + ["value", "status"]
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [repr(float(c)) for c in row.x]
            + [repr(float(row.value)), row.status]
        )
    return buf.getvalue()
