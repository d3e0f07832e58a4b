"""Multiplier sets and subdifferential upper estimates for the two-level
value functions.

The estimate constructions follow the three sensitivity regimes the
certification module also consumes:

  semicompact    union over sampled worst/best lower-level solutions y and
                 a geometric r-grid of {x-part : y-part = 0} inclusion sets,
                 each shifted by -r times the hull of valid lower-level
                 stationarity covectors (the Caratheodory aggregation is a
                 hull of generator choices, so hull algebra realizes it
                 exactly at simplex vertices);
  convex         generator-by-generator evaluation of the partial-gradient
                 formula driven by the two multiplier sets;
  semicontinuous the designated-point variant with the lower-level
                 stationarity set entering through its convexified hull.

The pessimistic estimates run the optimistic machinery on the program with
the upper objective negated and reflect the resulting hull.

All sets are V-representations; unbounded multiplier directions surface as
explicit rays except where a cap is documented (ray extension at r_max in
the convex variant, flagged `truncated`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ._polyalg import standard_vrep
from .errors import (
    EmptyEstimateError,
    InfeasiblePointError,
    NotApplicableError,
)
from .model import BilevelProgram, Expr, clarke_generators, eval_expr, used_indices
from .subdiff import Polytope, hull, minkowski_sum, negate, scale
from .valuefn import (
    GridSpec,
    SolutionSet,
    lower_solutions,
    optimistic_solutions,
)

DEFAULT_TOL_ACTIVE = 1e-8


@dataclass(frozen=True)
class Caps:
    """Enumeration caps; every report records the caps it ran under."""

    r_max: float = 10.0
    log_r_min: int = -3
    log_r_max: int = 1
    simplex_steps: int = 5
    u_max: float = 100.0
    max_solution_samples: int = 12
    max_bases: int = 300000

    def r_grid(self) -> Tuple[float, ...]:
        vals = {0.0, float(self.r_max)}
        vals.update(10.0**j for j in range(self.log_r_min, self.log_r_max + 1))
        return tuple(sorted(vals))


@dataclass(frozen=True)
class MultiplierSet:
    """V-representation of a lower-level multiplier polyhedron.

    kind 'lambda' lives in gamma-space (dim p); kind 'lambda_o' in
    (r, beta)-space (dim 1 + p).  Inactive coordinates are exactly zero on
    every generator.
    """

    kind: str
    dim: int
    vertices: Tuple[Tuple[float, ...], ...]
    rays: Tuple[Tuple[float, ...], ...]
    active: Tuple[int, ...]

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    def generator_points(self, caps: Caps):
        """Finite member sample: vertices plus r_max-truncated ray tips.

        Returns (points, truncated) where truncated reports whether rays
        were capped to produce finite points.
        """
        pts = [np.array(v) for v in self.vertices]
        truncated = False
        for v in self.vertices:
            for r in self.rays:
                ray = np.array(r)
                t = caps.r_max / np.max(np.abs(ray))
                pts.append(np.array(v) + t * ray)
                truncated = True
        return pts, truncated


def _gens(e: Expr, xbar, y, tol_active):
    return clarke_generators(e, xbar, y, tol_active)


def _active_indices(prog: BilevelProgram, xbar, y, tol_active):
    active = []
    for i, gi in enumerate(prog.g):
        val = float(eval_expr(gi, xbar, y))
        scale_i = 1.0 + abs(val)
        if val > tol_active * scale_i:
            raise InfeasiblePointError(
                f"constraint {i + 1} violated at (x, y): value {val}")
        if val >= -tol_active * scale_i:
            active.append(i)
    return active


def _dedup_rows(rows):
    seen = set()
    out = []
    for r in rows:
        key = tuple(np.round(np.asarray(r, dtype=float), 11).tolist())
        if key not in seen:
            seen.add(key)
            out.append(np.asarray(r, dtype=float))
    return out


def _normalize_ray(r):
    r = np.asarray(r, dtype=float)
    return r / np.max(np.abs(r))


def _vrep_fallback(A, b, max_bases, stat_tol):
    """Strict enumeration first; relax to the grid blur only when the
    strict system has no solutions (keeps lattice-exact cases exact)."""
    verts, rays = standard_vrep(A, b, max_bases)
    if verts or stat_tol is None:
        return verts, rays
    return standard_vrep(A, b, max_bases, res_tol=stat_tol)


def lambda_set(prog: BilevelProgram, xbar, y,
               tol_active: float = DEFAULT_TOL_ACTIVE,
               caps: Caps = Caps(),
               stat_tol: Optional[float] = None) -> MultiplierSet:
    """Lower-level stationarity multipliers gamma at (xbar, y).

    {gamma >= 0, zero off the active set, 0 in d_y f + sum gamma_i d_y g_i}
    with the partial subdifferentials taken as branch-generator hulls; the
    hull weights enter the lifted standard form so interpolated-gradient
    vertices are found, not just pure branch selections.
    """
    xbar = [float(v) for v in np.atleast_1d(xbar)]
    y = [float(v) for v in np.atleast_1d(y)]
    active = _active_indices(prog, xbar, y, tol_active)
    m, p = prog.m, prog.p

    f_gens = _gens(prog.f, xbar, y, tol_active)
    cols = []
    meta = []
    for gvec in f_gens:
        cols.append(np.concatenate([gvec[prog.n:], [1.0]]))
        meta.append(("f", None))
    for i in active:
        for gvec in _gens(prog.g[i], xbar, y, tol_active):
            cols.append(np.concatenate([gvec[prog.n:], [0.0]]))
            meta.append(("g", i))
    A = np.column_stack(cols)
    b = np.concatenate([np.zeros(m), [1.0]])
    verts, rays = _vrep_fallback(A, b, caps.max_bases, stat_tol)

    def project(w):
        gamma = np.zeros(p)
        for wv, (tag, i) in zip(w, meta):
            if tag == "g":
                gamma[i] += wv
        return gamma

    vert_pts = _dedup_rows([project(w) for w in verts])
    ray_pts = _dedup_rows(
        [_normalize_ray(project(w)) for w in rays
         if np.max(np.abs(project(w))) > 1e-12]
    )
    return MultiplierSet(
        "lambda", p,
        tuple(tuple(v.tolist()) for v in vert_pts),
        tuple(tuple(r.tolist()) for r in ray_pts),
        tuple(active),
    )


def lambda_o_set(prog: BilevelProgram, xbar, y,
                 tol_active: float = DEFAULT_TOL_ACTIVE,
                 caps: Caps = Caps(),
                 stat_tol: Optional[float] = None) -> MultiplierSet:
    """Upper-objective stationarity multipliers (r, beta) at (xbar, y):
    {r, beta >= 0, beta complementary, 0 in d_y F + r d_y f + sum beta_i d_y g_i}."""
    xbar = [float(v) for v in np.atleast_1d(xbar)]
    y = [float(v) for v in np.atleast_1d(y)]
    active = _active_indices(prog, xbar, y, tol_active)
    m, p = prog.m, prog.p

    cols = []
    meta = []
    for gvec in _gens(prog.F, xbar, y, tol_active):
        cols.append(np.concatenate([gvec[prog.n:], [1.0]]))
        meta.append(("F", None))
    for gvec in _gens(prog.f, xbar, y, tol_active):
        cols.append(np.concatenate([gvec[prog.n:], [0.0]]))
        meta.append(("r", None))
    for i in active:
        for gvec in _gens(prog.g[i], xbar, y, tol_active):
            cols.append(np.concatenate([gvec[prog.n:], [0.0]]))
            meta.append(("g", i))
    A = np.column_stack(cols)
    b = np.concatenate([np.zeros(m), [1.0]])
    verts, rays = _vrep_fallback(A, b, caps.max_bases, stat_tol)

    def project(w):
        out = np.zeros(1 + p)
        for wv, (tag, i) in zip(w, meta):
            if tag == "r":
                out[0] += wv
            elif tag == "g":
                out[1 + i] += wv
        return out

    vert_pts = _dedup_rows([project(w) for w in verts])
    ray_pts = _dedup_rows(
        [_normalize_ray(project(w)) for w in rays
         if np.max(np.abs(project(w))) > 1e-12]
    )
    return MultiplierSet(
        "lambda_o", 1 + p,
        tuple(tuple(v.tolist()) for v in vert_pts),
        tuple(tuple(r.tolist()) for r in ray_pts),
        tuple(active),
    )


# -- inclusion sets -----------------------------------------------------------


@dataclass(frozen=True)
class TaggedSet:
    """Polytope whose generators remember the multipliers realizing them."""

    polytope: Polytope
    vertex_meta: Tuple[dict, ...]
    ray_meta: Tuple[dict, ...]


def _inclusion_xset(
    prog: BilevelProgram,
    xbar,
    y,
    tol_active: float,
    caps: Caps,
    include_F: bool = False,
    r_coef: float = 0.0,
    F_expr: Optional[Expr] = None,
    stat_tol: Optional[float] = None,
) -> TaggedSet:
    """{x-part : (x-part, 0) in [dF +] r df + sum_i u_i dg_i at (xbar, y)}.

    With include_F this is the per-(y, r) inclusion set of the value-function
    estimate; without it, the set of valid lower-level stationarity covectors
    x*_s.  u ranges over the nonnegative active-indexed multipliers, entering
    through lifted branch-hull weights; unbounded u directions become rays.
    stat_tol relaxes the vanishing-y-block rows (grid-snapped points miss
    exact stationarity by the grid blur).
    """
    xbar = [float(v) for v in np.atleast_1d(xbar)]
    y = [float(v) for v in np.atleast_1d(y)]
    n, m, p = prog.n, prog.m, prog.p
    active = _active_indices(prog, xbar, y, tol_active)

    cols = []
    meta = []
    n_sum_rows = (1 if include_F else 0) + 1  # f-weights always constrained
    # rows: m stationarity rows, then the simplex/sum rows
    def col_vec(yp, sums):
        return np.concatenate([yp, sums])

    if include_F:
        Fe = F_expr if F_expr is not None else prog.F
        for gvec in _gens(Fe, xbar, y, tol_active):
            cols.append((gvec[:n], col_vec(gvec[n:], [1.0, 0.0])))
            meta.append(("F", None))
        f_sum = [0.0, 1.0]
    else:
        f_sum = [1.0]
    for gvec in _gens(prog.f, xbar, y, tol_active):
        cols.append((gvec[:n], col_vec(gvec[n:], f_sum)))
        meta.append(("f", None))
    zero_sum = [0.0, 0.0] if include_F else [0.0]
    for i in active:
        for gvec in _gens(prog.g[i], xbar, y, tol_active):
            cols.append((gvec[:n], col_vec(gvec[n:], zero_sum)))
            meta.append(("g", i))

    A = np.column_stack([c[1] for c in cols])
    if include_F:
        b = np.concatenate([np.zeros(m), [1.0, r_coef]])
    else:
        b = np.concatenate([np.zeros(m), [1.0]])
    verts, rays = _vrep_fallback(A, b, caps.max_bases, stat_tol)

    proj = np.column_stack([c[0] for c in cols])

    def decode(w):
        u = np.zeros(p)
        for wv, (tag, i) in zip(w, meta):
            if tag == "g":
                u[i] += wv
        return {"u": tuple(u.tolist()), "y": tuple(y)}

    vert_pts, vert_meta = [], []
    for w in verts:
        vert_pts.append(proj @ w)
        vert_meta.append(decode(w))
    ray_pts, ray_meta = [], []
    for w in rays:
        pt = proj @ w
        if np.max(np.abs(pt)) > 1e-12:
            ray_pts.append(pt)
            ray_meta.append(decode(w))
    if not vert_pts:
        return TaggedSet(Polytope.empty(n), (), ())
    return TaggedSet(
        Polytope.from_generators(n, vert_pts, ray_pts),
        tuple(vert_meta),
        tuple(ray_meta),
    )


def stationary_cover_set(prog: BilevelProgram, xbar, y,
                         tol_active: float = DEFAULT_TOL_ACTIVE,
                         caps: Caps = Caps()) -> TaggedSet:
    """Valid lower-level covectors x*_s at one y in S(xbar)."""
    return _inclusion_xset(prog, xbar, y, tol_active, caps, include_F=False)


def stationary_cover_hull(prog: BilevelProgram, xbar,
                          solutions: SolutionSet,
                          tol_active: float = DEFAULT_TOL_ACTIVE,
                          caps: Caps = Caps(),
                          stat_tol: Optional[float] = None):
    """Hull over sampled S(xbar) of the per-y covector sets.

    Returns (polytope, per-generator metadata list aligned with
    vertices + rays order).
    """
    vert_pts, vert_meta, ray_pts, ray_meta = [], [], [], []
    for ypt in _subsample(solutions.points, caps.max_solution_samples):
        tagged = _inclusion_xset(prog, xbar, list(ypt), tol_active, caps,
                                 stat_tol=stat_tol)
        for v, mdat in zip(tagged.polytope.vertices, tagged.vertex_meta):
            vert_pts.append(np.array(v))
            vert_meta.append(mdat)
        for r, mdat in zip(tagged.polytope.rays, tagged.ray_meta):
            ray_pts.append(np.array(r))
            ray_meta.append(mdat)
    if not vert_pts:
        return Polytope.empty(prog.n), [], []
    poly = Polytope.from_generators(prog.n, vert_pts, ray_pts)
    return poly, vert_meta, ray_meta


def _subsample(points: Sequence, cap: int):
    """Deterministic subsample that always keeps the best point.

    SolutionSet point lists are ordered best-first; the remainder is
    spread evenly in lexicographic order so extremes stay represented.
    """
    if len(points) <= cap:
        return sorted(points)
    best = points[0]
    rest = sorted(points[1:])
    idx = np.unique(np.round(np.linspace(0, len(rest) - 1, cap - 1)).astype(int))
    out = [best] + [rest[i] for i in idx]
    seen = set()
    uniq = []
    for p in out:
        if p not in seen:
            seen.add(p)
            uniq.append(p)
    return uniq


def _phi_star_set(prog: BilevelProgram, xbar, y, tol_active, caps,
                  stat_tol=None) -> Polytope:
    """Convexified lower-level stationarity covectors at the designated point."""
    return _inclusion_xset(prog, xbar, y, tol_active, caps,
                           stat_tol=stat_tol).polytope


def grid_blur(grid: GridSpec, prog: BilevelProgram) -> float:
    """Activity/stationarity tolerance matched to solution sampling.

    Sampled solution points sit up to a finest cell from true optima from
    grid snapping, and up to tol_val / slope inside the feasible region
    from the optimality band; the floor covers default bands at desk-scale
    slopes."""
    return max(25.0 * grid.finest_cell(prog.box_y), 2e-5)


# -- estimates ----------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Upper estimate of a value-function subdifferential, with provenance."""

    polytope: Polytope
    variant: str
    mode: str
    xbar: Tuple[float, ...]
    truncated: bool
    n_solution_samples: int
    caps: Caps
    notes: Tuple[str, ...] = ()


def _partial_hull(e: Expr, xbar, y, tol_active, part, n) -> Polytope:
    gens = _gens(e, xbar, y, tol_active)
    if part == "x":
        pts = [g[:n] for g in gens]
        return Polytope.from_generators(n, pts)
    pts = [g[n:] for g in gens]
    return Polytope.from_generators(len(pts[0]), pts)


def estimate_optimistic(
    prog: BilevelProgram,
    xbar,
    variant: str = "semicompact",
    grid: GridSpec = GridSpec(),
    caps: Caps = Caps(),
    tol_active: float = DEFAULT_TOL_ACTIVE,
    ybar=None,
) -> Estimate:
    """Upper estimate of the optimistic value-function subdifferential."""
    poly, truncated, n_samples, notes = _estimate_core(
        prog, xbar, variant, grid, caps, tol_active, ybar)
    return Estimate(poly, variant, "optimistic", tuple(float(v) for v in np.atleast_1d(xbar)),
                    truncated, n_samples, caps, tuple(notes))


def estimate_pessimistic(
    prog: BilevelProgram,
    xbar,
    variant: str = "semicompact",
    grid: GridSpec = GridSpec(),
    caps: Caps = Caps(),
    tol_active: float = DEFAULT_TOL_ACTIVE,
    ybar=None,
) -> Estimate:
    """Upper estimate for the pessimistic value function.

    Runs the optimistic construction on the negated-upper program (whose
    best-case solution set is the original worst-case one) and reflects the
    hull; the simplex aggregation over tuples collapses into the hull of
    the union, attained at simplex vertices.
    """
    negp = prog.negated_upper()
    poly, truncated, n_samples, notes = _estimate_core(
        negp, xbar, variant, grid, caps, tol_active, ybar)
    return Estimate(
        negate(poly), variant, "pessimistic",
        tuple(float(v) for v in np.atleast_1d(xbar)),
        truncated, n_samples, caps,
        tuple(notes) + ("reflected from negated-upper program",),
    )


def _estimate_core(prog, xbar, variant, grid, caps, tol_active, ybar):
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    sol_o = optimistic_solutions(prog, xbar_l, grid)
    samples = _subsample(sol_o.points, caps.max_solution_samples)
    blur = grid_blur(grid, prog)
    eff_tol = max(tol_active, blur)
    notes = []
    if variant == "semicompact":
        poly = _estimate_semicompact(prog, xbar_l, samples, grid, caps,
                                     eff_tol, blur)
        truncated = False
    elif variant == "convex":
        poly, truncated, conv_notes = _estimate_convex(
            prog, xbar_l, samples, caps, eff_tol, blur)
        notes.extend(conv_notes)
    elif variant == "semicontinuous":
        ypt = list(ybar) if ybar is not None else list(samples[0])
        poly = _estimate_semicontinuous(prog, xbar_l, ypt, caps, eff_tol, blur)
        truncated = False
        notes.append(f"designated lower-level point {tuple(ypt)}")
    else:
        raise ValueError(f"unknown estimate variant {variant!r}")
    return poly, truncated, len(samples), notes


def _estimate_semicompact(prog, xbar, samples, grid, caps, tol_active,
                          stat_tol=None):
    sol_all = lower_solutions(prog, xbar, grid)
    cover, _, _ = stationary_cover_hull(prog, xbar, sol_all, tol_active, caps,
                                        stat_tol=stat_tol)
    pieces = []
    if cover.is_empty:
        # no valid lower-level covector tuples exist at any sampled y, so
        # every (y, r) contribution is empty
        raise EmptyEstimateError("lower-level covector set is empty at xbar")
    for ypt in samples:
        for r in caps.r_grid():
            inc = _inclusion_xset(prog, xbar, list(ypt), tol_active, caps,
                                  include_F=True, r_coef=r, stat_tol=stat_tol)
            if inc.polytope.is_empty:
                continue
            shifted = minkowski_sum(inc.polytope, scale(negate(cover), r))
            pieces.append(shifted)
    if not pieces:
        raise EmptyEstimateError(
            "no (y, r) pair produced a nonempty inclusion set")
    return hull(pieces)


def _estimate_convex(prog, xbar, samples, caps, tol_active, stat_tol=None):
    n = prog.n
    pieces = []
    truncated = False
    notes = []
    skipped = 0
    for ypt in samples:
        lam = lambda_set(prog, xbar, list(ypt), tol_active, caps,
                         stat_tol=stat_tol)
        lam_o = lambda_o_set(prog, xbar, list(ypt), tol_active, caps,
                             stat_tol=stat_tol)
        if lam.is_empty or lam_o.is_empty:
            skipped += 1
            continue
        gamma_pts, t1 = lam.generator_points(caps)
        rb_pts, t2 = lam_o.generator_points(caps)
        truncated = truncated or t1 or t2
        P_Fx = _partial_hull(prog.F, xbar, list(ypt), tol_active, "x", n)
        P_fx = _partial_hull(prog.f, xbar, list(ypt), tol_active, "x", n)
        fx_diff = minkowski_sum(P_fx, negate(P_fx))
        P_gx = [
            _partial_hull(gi, xbar, list(ypt), tol_active, "x", n)
            for gi in prog.g
        ]
        for rb in rb_pts:
            r, beta = float(rb[0]), rb[1:]
            for gamma in gamma_pts:
                piece = P_Fx
                piece = minkowski_sum(piece, scale(fx_diff, r))
                for i in range(prog.p):
                    if beta[i] > 0:
                        piece = minkowski_sum(piece, scale(P_gx[i], beta[i]))
                gsum = None
                for i in range(prog.p):
                    if gamma[i] > 0:
                        term = scale(P_gx[i], gamma[i])
                        gsum = term if gsum is None else minkowski_sum(gsum, term)
                if gsum is not None and r > 0:
                    piece = minkowski_sum(piece, scale(negate(gsum), r))
                pieces.append(piece)
    if skipped:
        notes.append(f"{skipped} sampled y had empty multiplier sets")
    if not pieces:
        raise EmptyEstimateError("all sampled multiplier sets were empty")
    return hull(pieces), truncated, notes


def _estimate_semicontinuous(prog, xbar, ypt, caps, tol_active,
                             stat_tol=None):
    phi_star = _phi_star_set(prog, xbar, ypt, tol_active, caps,
                             stat_tol=stat_tol)
    pieces = []
    for r in caps.r_grid():
        inc = _inclusion_xset(prog, xbar, ypt, tol_active, caps,
                              include_F=True, r_coef=r, stat_tol=stat_tol)
        if inc.polytope.is_empty:
            continue
        if phi_star.is_empty:
            continue
        pieces.append(minkowski_sum(inc.polytope, scale(negate(phi_star), r)))
    if not pieces:
        raise EmptyEstimateError("inclusion set empty at the designated point")
    return hull(pieces)


def estimate_simple_convex(
    prog: BilevelProgram,
    xbar,
    grid: GridSpec = GridSpec(),
    caps: Caps = Caps(),
    tol_active: float = DEFAULT_TOL_ACTIVE,
    convexity_seed: int = 20240,
) -> Estimate:
    """Parameter-independent lower level: the estimate collapses to the
    hull of the upper objective's x-gradients over sampled best solutions.

    Requires f and g to reference no x variable (syntactic) and convex
    data (spot-checked by seeded midpoint tests).
    """
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    for label, e in (("f", prog.f), *((f"g{i+1}", gi) for i, gi in enumerate(prog.g))):
        xi, _ = used_indices(e)
        if xi:
            raise NotApplicableError(
                f"lower-level data {label} references x: parameter-dependent")
    if not _midpoint_convexity_ok(prog, convexity_seed):
        raise NotApplicableError("midpoint convexity spot-check failed")
    sol_o = optimistic_solutions(prog, xbar_l, grid)
    samples = _subsample(sol_o.points, caps.max_solution_samples)
    pts = []
    for ypt in samples:
        for gvec in _gens(prog.F, xbar_l, list(ypt), tol_active):
            pts.append(gvec[: prog.n])
    return Estimate(
        Polytope.from_generators(prog.n, pts),
        "simple_convex", "optimistic", tuple(xbar_l),
        False, len(samples), caps,
        ("convexity spot-checked by midpoint sampling",),
    )


def _midpoint_convexity_ok(prog: BilevelProgram, seed: int, trials: int = 200,
                           tol: float = 1e-9) -> bool:
    rng = np.random.default_rng(seed)
    exprs = [prog.F, prog.f, *prog.g]
    box = list(prog.box_x) + list(prog.box_y)
    for _ in range(trials):
        a = np.array([rng.uniform(lo, hi) for lo, hi in box])
        b = np.array([rng.uniform(lo, hi) for lo, hi in box])
        mid = 0.5 * (a + b)
        for e in exprs:
            va = eval_expr(e, a[: prog.n], a[prog.n:])
            vb = eval_expr(e, b[: prog.n], b[prog.n:])
            vm = eval_expr(e, mid[: prog.n], mid[prog.n:])
            if vm > 0.5 * (va + vb) + tol * (1 + abs(va) + abs(vb)):
                return False
    return True
