"""Constraint-qualification and regularity verdicts.

Every check returns a CQVerdict with one of four statuses: Guaranteed
(syntactic sufficient condition), Holds (numerical evidence at the stated
tolerance), Fails (with an independently re-verifiable witness), Unknown
(the check cannot decide).  Calmness in particular is never refuted
numerically: no finite sample can, so it reports Guaranteed or Unknown
only.

The pointbased checks exploit positive homogeneity of the multiplier
region: the slice with multipliers summing to one is searched, so the
Holds threshold is scale-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ._polyalg import LPBuilder
from .errors import InfeasibleError, InfeasiblePointError, NotApplicableError
from .model import (
    BilevelProgram,
    affine_coefficients,
    clarke_generators,
    eval_expr,
    is_smooth,
    used_indices,
)
from .sensitivity import Caps, DEFAULT_TOL_ACTIVE, _active_indices
from .subdiff import (
    Polytope,
    distance,
    fd_subgradient_samples,
    hull,
    minkowski_sum,
    project,
    scale as poly_scale,
)
from .valuefn import (
    GridSpec,
    lower_solutions,
    optimistic_solutions,
    pessimistic_solutions,
    value_function,
)

FD_RADIUS = 1e-5
FD_STEP = 1e-3
FD_DIRS = 6


@dataclass(frozen=True)
class CQVerdict:
    kind: str      # PolyhedralCalmness, CQ_K, CQ_S, GenMFCQ,
                   # InnerSemicompact, InnerSemicontinuous, CodCQConvex
    status: str    # Guaranteed, Holds, Fails, Unknown
    tol: float = 0.0
    witness: Optional[dict] = None
    detail: str = ""
    seed: int = 0

    def to_dict(self):
        out = {
            "kind": self.kind,
            "status": self.status,
            "tol": self.tol,
            "detail": self.detail,
            "seed": self.seed,
        }
        if self.witness is not None:
            out["witness"] = {
                k: (list(v) if isinstance(v, (tuple, list, np.ndarray)) else v)
                for k, v in self.witness.items()
            }
        return out


# -- calmness ---------------------------------------------------------------


def check_polyhedral_calmness(prog: BilevelProgram, which: str) -> CQVerdict:
    """Guaranteed when the mapping's data are affine (piecewise-polyhedral
    graph, hence calm everywhere); otherwise Unknown, never Fails."""
    if which == "K":
        ok = all(affine_coefficients(gi, prog.n, prog.m) is not None
                 for gi in prog.g)
        what = "lower-level constraints affine"
    elif which == "S":
        ok = (
            all(affine_coefficients(gi, prog.n, prog.m) is not None
                for gi in prog.g)
            and affine_coefficients(prog.f, prog.n, prog.m) is not None
        )
        what = "lower-level constraints and objective affine"
    elif which == "X":
        ok = all(affine_coefficients(t, prog.n, 0) is not None
                 for t in prog.theta1)
        what = "upper-level constraints affine"
    else:
        raise ValueError(f"unknown mapping {which!r}")
    if ok:
        return CQVerdict(f"PolyhedralCalmness[{which}]", "Guaranteed",
                         detail=what)
    return CQVerdict(f"PolyhedralCalmness[{which}]", "Unknown",
                     detail=f"not syntactically polyhedral ({what} fails)")


def check_polyhedral_calmness_all(prog: BilevelProgram):
    return tuple(check_polyhedral_calmness(prog, w) for w in ("K", "S", "X"))


# -- pointbased coderivative-style checks -------------------------------------


def _joint_gens(e, xbar, y, tol_active):
    return clarke_generators(e, xbar, y, tol_active)


def check_pointbased_cq(
    prog: BilevelProgram,
    which: str,
    xbar,
    y,
    tol: float = 1e-8,
    caps: Caps = Caps(),
    grid: GridSpec = GridSpec(),
    tol_active: float = DEFAULT_TOL_ACTIVE,
    seed: int = 0,
) -> CQVerdict:
    """Pointbased qualification for the feasible map (K) or solution map (S).

    Maximizes |x*_c| over the normalized multiplier slice of the
    finitely-generated relaxation: branch generators for f and the active
    g_i, fd-cluster generators for the negated lower value function in the
    S variant.  Holds when the maximum stays below tol; Fails ships the
    maximizing witness; ambiguous fd clustering degrades to Unknown.
    """
    if which not in ("K", "S"):
        raise ValueError("which must be 'K' or 'S'")
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    y_l = [float(v) for v in np.atleast_1d(y)]
    n, m = prog.n, prog.m
    active = _active_indices(prog, xbar_l, y_l, tol_active)

    phi_gens = []
    if which == "S":
        h = value_function(prog, "phi", grid)
        clusters = fd_subgradient_samples(
            h, xbar_l, n_dirs=FD_DIRS, radius=FD_RADIUS, step=FD_STEP,
            seed=seed)
        if clusters.spreads and max(clusters.spreads) > 10.0 * tol + 1e-6:
            return CQVerdict(
                f"CQ_{which}", "Unknown", tol,
                detail="fd clustering of the lower value function is ambiguous",
                seed=seed)
        phi_gens = [-np.array(c) for c in clusters.clusters]

    best_val = 0.0
    best = None
    for coord in range(n):
        for sign in (1.0, -1.0):
            lp = LPBuilder()
            g_cols = []       # (var, i, joint generator)
            for i in active:
                for gvec in _joint_gens(prog.g[i], xbar_l, y_l, tol_active):
                    g_cols.append((lp.var(), i, gvec))
            f_cols, p_cols, r_var = [], [], None
            if which == "S":
                r_var = lp.var(ub=None)
                for gvec in _joint_gens(prog.f, xbar_l, y_l, tol_active):
                    f_cols.append((lp.var(), gvec))
                for pv in phi_gens:
                    p_cols.append((lp.var(), np.concatenate([pv, np.zeros(m)])))
                lp.eq({**{v: 1.0 for v, _ in f_cols}, r_var: -1.0}, 0.0)
                lp.eq({**{v: 1.0 for v, _ in p_cols}, r_var: -1.0}, 0.0)
            # normalization: total multiplier mass one (scale invariance)
            norm_row = {v: 1.0 for v, _, _ in g_cols}
            if r_var is not None:
                norm_row[r_var] = 1.0
            if not norm_row:
                return CQVerdict(f"CQ_{which}", "Holds", tol,
                                 detail="no active multipliers admissible",
                                 seed=seed)
            lp.eq(norm_row, 1.0)
            for row in range(m):
                coeffs = {v: g[n + row] for v, _, g in g_cols}
                for v, g in f_cols:
                    coeffs[v] = g[n + row]
                for v, g in p_cols:
                    coeffs[v] = coeffs.get(v, 0.0) + g[n + row]
                lp.eq(coeffs, 0.0)
            obj = {v: sign * g[coord] for v, _, g in g_cols}
            for v, g in f_cols:
                obj[v] = sign * g[coord]
            for v, g in p_cols:
                obj[v] = obj.get(v, 0.0) + sign * g[coord]
            val, sol = lp.maximize(obj)
            if val is None:
                continue  # empty normalized slice: only the zero multiplier
            if val > best_val:
                best_val = val
                u = np.zeros(prog.p)
                gdir: dict = {}
                for v, i, g in g_cols:
                    u[i] += sol[v]
                    gdir[i] = gdir.get(i, np.zeros(n + m)) + sol[v] * g
                xstar = np.zeros(n)
                for v, i, g in g_cols:
                    xstar += sol[v] * g[:n]
                fvec = np.zeros(n + m)
                phivec = np.zeros(n)
                rv = 0.0
                if which == "S":
                    rv = float(sol[r_var])
                    for v, g in f_cols:
                        fvec += sol[v] * g
                    for v, g in p_cols:
                        phivec += sol[v] * g[:n]
                    xstar += fvec[:n] + phivec
                best = {
                    "xstar": tuple(xstar.tolist()),
                    "u": tuple(u.tolist()),
                    "r": rv,
                    "g_dirs": {i: tuple(v.tolist()) for i, v in gdir.items()},
                    "f_vec": tuple(fvec.tolist()),
                    "phi_vec": tuple(phivec.tolist()),
                }
    if best_val <= tol:
        return CQVerdict(f"CQ_{which}", "Holds", tol,
                         detail=f"max |x*| over normalized slice = {best_val:.3e}",
                         seed=seed)
    return CQVerdict(f"CQ_{which}", "Fails", tol, witness=best,
                     detail=f"x* with |x*|_inf = {best_val:.3e} admissible",
                     seed=seed)


def recheck_pointbased_witness(prog: BilevelProgram, verdict: CQVerdict,
                               xbar, y, tol_active: float = DEFAULT_TOL_ACTIVE):
    """Independent witness re-substitution for a Fails verdict.

    Rebuilds (x*, 0) from the witness multipliers and generator choices,
    confirms each chosen direction lies in its generator hull, the y-block
    vanishes, and the x-block exceeds the tolerance.
    """
    assert verdict.status == "Fails" and verdict.witness is not None
    w = verdict.witness
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    y_l = [float(v) for v in np.atleast_1d(y)]
    n, m = prog.n, prog.m
    total = np.zeros(n + m)
    for i_str, vec in w["g_dirs"].items():
        i = int(i_str)
        vec = np.array(vec)
        u_i = w["u"][i]
        if u_i > 0:
            gi_hull = hull(_joint_gens(prog.g[i], xbar_l, y_l, tol_active),
                           dim=n + m)
            if distance(poly_scale(gi_hull, u_i), list(vec)) > 1e-8:
                return False
        total += vec
    total += np.array(w["f_vec"])
    total[:n] += np.array(w["phi_vec"])
    if np.max(np.abs(total[n:])) > 1e-7:
        return False
    xstar = np.array(w["xstar"])
    if np.max(np.abs(total[:n] - xstar)) > 1e-7:
        return False
    return np.max(np.abs(xstar)) > verdict.tol


# -- generalized MFCQ ---------------------------------------------------------


def check_gen_mfcq(
    prog: BilevelProgram,
    xbar,
    ybar,
    tol: float = 1e-8,
    tol_active: float = DEFAULT_TOL_ACTIVE,
) -> CQVerdict:
    """No vanishing convex combination of active constraint generalized
    gradients: min over the multiplier simplex of |sum gamma_i G_i|."""
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    y_l = [float(v) for v in np.atleast_1d(ybar)]
    active = _active_indices(prog, xbar_l, y_l, tol_active)
    if not active:
        return CQVerdict("GenMFCQ", "Holds", tol,
                         detail="no active constraints (vacuous)")
    gens = []
    owner = []
    for i in active:
        for gvec in _joint_gens(prog.g[i], xbar_l, y_l, tol_active):
            gens.append(gvec)
            owner.append(i)
    poly = hull(gens, dim=prog.n + prog.m)
    dist, point, lam, _ = project(poly, np.zeros(prog.n + prog.m))
    if dist > tol:
        return CQVerdict("GenMFCQ", "Holds", tol,
                         detail=f"min |combination| = {dist:.3e}")
    gamma = np.zeros(prog.p)
    # map the hull weights back to per-constraint simplex weights
    for w, i in zip(lam, owner):
        gamma[i] += w
    dirs = {}
    for w, i, g in zip(lam, owner, gens):
        dirs[i] = dirs.get(i, np.zeros(prog.n + prog.m)) + w * np.array(g)
    witness = {
        "gamma": tuple(gamma.tolist()),
        "g_dirs": {i: tuple(v.tolist()) for i, v in dirs.items()},
        "residual": dist,
    }
    return CQVerdict("GenMFCQ", "Fails", tol, witness=witness,
                     detail="vanishing combination with |gamma|_1 = 1")


def recheck_mfcq_witness(prog: BilevelProgram, verdict: CQVerdict,
                         xbar, ybar, tol_active: float = DEFAULT_TOL_ACTIVE):
    """Fails witness re-substitution for the generalized MFCQ."""
    assert verdict.status == "Fails" and verdict.witness is not None
    w = verdict.witness
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    y_l = [float(v) for v in np.atleast_1d(ybar)]
    gamma = np.array(w["gamma"])
    if abs(gamma.sum() - 1.0) > 1e-9 or np.min(gamma) < -1e-12:
        return False
    total = np.zeros(prog.n + prog.m)
    for i_str, vec in w["g_dirs"].items():
        i = int(i_str)
        vec = np.array(vec)
        if gamma[i] > 0:
            gi_hull = hull(_joint_gens(prog.g[i], xbar_l, y_l, tol_active),
                           dim=prog.n + prog.m)
            if distance(poly_scale(gi_hull, gamma[i]), list(vec)) > 1e-8:
                return False
        total += vec
    # the witness violates the implication: nontrivial gamma, vanishing sum
    return np.max(np.abs(total)) <= verdict.tol + 1e-9 and gamma.max() > verdict.tol


# -- inner regularity ----------------------------------------------------------


def _mode_solutions(prog: BilevelProgram, x, grid):
    if prog.mode == "pessimistic":
        return pessimistic_solutions(prog, x, grid)
    return optimistic_solutions(prog, x, grid)


def check_inner_regularity(
    prog: BilevelProgram,
    kind: str,
    xbar,
    ybar=None,
    radius: float = 0.1,
    n_samples: int = 8,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
) -> CQVerdict:
    """Sampling evidence for inner semicompactness / semicontinuity of the
    mode-appropriate solution map near xbar.

    semicompact: sampled solution sets must be nonempty and clear of the
    y-box boundary (box-clipped sets degrade to Unknown: boundedness may be
    an artifact of the box).  semicontinuous: dist(ybar, S(x)) must shrink
    with the sampling shell; a non-vanishing distance Fails with the
    offending x.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    xbar_v = np.asarray(xbar, dtype=float)
    rng = np.random.default_rng(seed)
    margin = 2.0 * grid.coarse_cell(prog.box_y)

    def sample_shell(rho):
        pts = []
        for _ in range(n_samples):
            u = rng.normal(size=prog.n)
            u /= np.linalg.norm(u)
            pts.append(xbar_v + rho * u)
        return pts

    if kind == "semicompact":
        try:
            _mode_solutions(prog, list(xbar_v), grid)
        except InfeasibleError:
            raise InfeasiblePointError("xbar outside dom phi") from None
        clipped = False
        seen = 0
        for x in sample_shell(radius):
            try:
                sol = _mode_solutions(prog, list(x), grid)
            except InfeasibleError:
                continue
            seen += 1
            for ypt in sol.points:
                for j, (lo, hi) in enumerate(prog.box_y):
                    if ypt[j] < lo + margin or ypt[j] > hi - margin:
                        clipped = True
        if seen == 0:
            return CQVerdict("InnerSemicompact", "Unknown", radius,
                             detail="no feasible neighbors sampled", seed=seed)
        if clipped:
            return CQVerdict(
                "InnerSemicompact", "Unknown", radius,
                detail="solutions touch the y-box; boundedness may be an artifact",
                seed=seed)
        return CQVerdict("InnerSemicompact", "Holds", radius,
                         detail=f"{seen} sampled neighbors, interior solutions",
                         seed=seed)

    if kind == "semicontinuous":
        if ybar is None:
            raise ValueError("semicontinuous check needs ybar")
        ybar_v = np.asarray(ybar, dtype=float)
        # intrinsic blur: the optimality band has nonzero width (e.g.
        # sqrt(tol_val) for quadratic objectives), so distances are judged
        # against the blur observed at xbar itself
        sol0 = _mode_solutions(prog, list(xbar_v), grid)
        d_base = min(
            float(np.max(np.abs(np.array(p) - ybar_v))) for p in sol0.points
        )
        spatial_tol = 2.0 * grid.finest_cell(prog.box_y) + 1e-6 + 2.0 * d_base

        def shell_dist(rho):
            worst = 0.0
            worst_x = None
            for x in sample_shell(rho):
                try:
                    sol = _mode_solutions(prog, list(x), grid)
                except InfeasibleError:
                    continue
                d = min(
                    float(np.max(np.abs(np.array(p) - ybar_v)))
                    for p in sol.points
                )
                if d > worst:
                    worst, worst_x = d, x
            return worst, worst_x

        d_outer, _ = shell_dist(radius)
        d_inner, x_inner = shell_dist(radius / 8.0)
        if d_inner <= max(d_outer / 4.0, spatial_tol):
            return CQVerdict("InnerSemicontinuous", "Holds", radius,
                             detail=f"dist shrinks: {d_outer:.3e} -> {d_inner:.3e}",
                             seed=seed)
        return CQVerdict(
            "InnerSemicontinuous", "Fails", radius,
            witness={"x": tuple(np.asarray(x_inner).tolist()),
                     "dist": d_inner},
            detail=f"dist(ybar, S(x)) stays {d_inner:.3e} at shell {radius / 8:.1e}",
            seed=seed)

    raise ValueError(f"unknown regularity kind {kind!r}")


# -- convex coderivative qualification -----------------------------------------


def check_codcq_convex(
    prog: BilevelProgram,
    xbar,
    ybar,
    seed: int = 20240,
) -> CQVerdict:
    """Parameter-free convex lower level: affine-in-y constraints make the
    perturbed feasible map polyhedral, hence calm, validating the pointbased
    solution-map qualification.  Requires x-free g; smooth f; convex data
    (spot-checked)."""
    for i, gi in enumerate(prog.g):
        xi, _ = used_indices(gi)
        if xi:
            raise NotApplicableError(
                f"lower constraint {i + 1} references x")
    all_affine_y = all(
        affine_coefficients(gi, prog.n, prog.m) is not None for gi in prog.g
    )
    if all_affine_y and is_smooth(prog.f) and _convex_spot_check(prog, seed):
        return CQVerdict("CodCQConvex", "Guaranteed",
                         detail="affine-in-y constraints, smooth convex objective")
    return CQVerdict("CodCQConvex", "Unknown",
                     detail="sufficient conditions not syntactically verified")


def _convex_spot_check(prog: BilevelProgram, seed: int, trials: int = 200,
                       tol: float = 1e-9) -> bool:
    rng = np.random.default_rng(seed)
    box = list(prog.box_x) + list(prog.box_y)
    for _ in range(trials):
        a = np.array([rng.uniform(lo, hi) for lo, hi in box])
        b = np.array([rng.uniform(lo, hi) for lo, hi in box])
        mid = 0.5 * (a + b)
        for e in (prog.f, *prog.g):
            va = eval_expr(e, a[: prog.n], a[prog.n:])
            vb = eval_expr(e, b[: prog.n], b[prog.n:])
            vm = eval_expr(e, mid[: prog.n], mid[prog.n:])
            if vm > 0.5 * (va + vb) + tol * (1 + abs(va) + abs(vb)):
                return False
    return True


# -- bundles -------------------------------------------------------------------


def cq_bundle(
    prog: BilevelProgram,
    xbar,
    variant: str,
    grid: GridSpec = GridSpec(),
    caps: Caps = Caps(),
    ybar=None,
    seed: int = 0,
) -> Tuple[CQVerdict, ...]:
    """The verdicts a given estimate/certificate variant relies on."""
    xbar_l = [float(v) for v in np.atleast_1d(xbar)]
    out = list(check_polyhedral_calmness_all(prog))
    try:
        sol = _mode_solutions(prog, xbar_l, grid)
        y0 = list(sol.points[0])
    except InfeasibleError:
        out.append(CQVerdict("CQ_K", "Unknown", detail="xbar outside dom phi"))
        return tuple(out)
    out.append(check_pointbased_cq(prog, "K", xbar_l, y0, caps=caps,
                                   grid=grid, seed=seed))
    out.append(check_pointbased_cq(prog, "S", xbar_l, y0, caps=caps,
                                   grid=grid, seed=seed))
    out.append(check_gen_mfcq(prog, xbar_l, y0))
    if variant == "semicontinuous":
        out.append(check_inner_regularity(
            prog, "semicontinuous", xbar_l,
            ybar=ybar if ybar is not None else y0,
            grid=grid, seed=seed))
    else:
        out.append(check_inner_regularity(
            prog, "semicompact", xbar_l, grid=grid, seed=seed))
    return tuple(out)
