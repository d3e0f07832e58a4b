"""Finite-generator convex sets and numerical subgradient oracles.

Polytopes are kept in V-representation throughout: a finite vertex list
plus optional ray generators.  Estimate sets downstream arise naturally as
generator unions and Minkowski sums, and desk-scale dimensions (<= 4) make
containment by a small least-distance program cheaper and more robust than
facet enumeration.

The projector is a fully corrective Frank-Wolfe (min-norm-point) scheme:
affine minimization over the current support, line search dropping
negative weights, and an exact linear minimization oracle over vertices
and rays.  On polyhedral data it terminates finitely and delivers
machine-precision distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySetError,
    EvaluationError,
    InfeasibleError,
    InfeasiblePointError,
    NotPolyhedralError,
)
from .model import affine_coefficients


def _rows(points, dim) -> np.ndarray:
    arr = np.asarray(list(points), dtype=float)
    if arr.size == 0:
        return np.zeros((0, dim))
    if arr.ndim == 1:
        arr = arr.reshape(-1, dim)
    return arr


@dataclass(frozen=True)
class Polytope:
    """conv(vertices) + cone(rays) in R^dim; no vertices means empty."""

    dim: int
    vertices: Tuple[Tuple[float, ...], ...] = ()
    rays: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        for v in self.vertices:
            if len(v) != self.dim:
                raise DimensionMismatchError("vertex dimension mismatch")
        for r in self.rays:
            if len(r) != self.dim:
                raise DimensionMismatchError("ray dimension mismatch")
            if not any(abs(c) > 0.0 for c in r):
                raise EmptySetError("ray generators must be nonzero")

    @staticmethod
    def from_generators(dim, vertices, rays=()) -> "Polytope":
        verts = _dedup(_rows(vertices, dim))
        rays_arr = _dedup(_rows(rays, dim))
        rays_arr = [r for r in rays_arr if np.max(np.abs(r)) > 0.0]
        return Polytope(
            dim,
            tuple(tuple(v) for v in verts),
            tuple(tuple(r) for r in rays_arr),
        )

    @staticmethod
    def singleton(point) -> "Polytope":
        point = tuple(float(c) for c in point)
        return Polytope(len(point), (point,))

    @staticmethod
    def zero(dim) -> "Polytope":
        return Polytope(dim, (tuple(0.0 for _ in range(dim)),))

    @staticmethod
    def empty(dim) -> "Polytope":
        return Polytope(dim, ())

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    def vertex_array(self) -> np.ndarray:
        return _rows(self.vertices, self.dim)

    def ray_array(self) -> np.ndarray:
        return _rows(self.rays, self.dim)


def _dedup(arr: np.ndarray):
    seen = set()
    out = []
    for row in arr:
        key = tuple(row.tolist())
        if key not in seen:
            seen.add(key)
            out.append(row)
    return out


def _check_dims(p: Polytope, q: Polytope):
    if p.dim != q.dim:
        raise DimensionMismatchError(f"dim {p.dim} vs {q.dim}")


def minkowski_sum(p: Polytope, q: Polytope) -> Polytope:
    """Pairwise vertex sums, ray union.  Empty operands propagate empty."""
    _check_dims(p, q)
    if p.is_empty or q.is_empty:
        return Polytope.empty(p.dim)
    verts = [np.array(a) + np.array(b) for a in p.vertices for b in q.vertices]
    return Polytope.from_generators(p.dim, verts, list(p.rays) + list(q.rays))


def scale(p: Polytope, lam: float) -> Polytope:
    if lam < 0:
        raise ValueError("scale factor must be nonnegative")
    if p.is_empty:
        return Polytope.empty(p.dim)
    if lam == 0.0:
        return Polytope.zero(p.dim)
    verts = [lam * np.array(v) for v in p.vertices]
    rays = [lam * np.array(r) for r in p.rays]
    return Polytope.from_generators(p.dim, verts, rays)


def negate(p: Polytope) -> Polytope:
    """Generator-level reflection; exact, no arithmetic beyond sign flips."""
    return Polytope(
        p.dim,
        tuple(tuple(-c for c in v) for v in p.vertices),
        tuple(tuple(-c for c in r) for r in p.rays),
    )


def hull(polytopes_or_points, rays=(), dim: Optional[int] = None) -> Polytope:
    """Convex hull of a union of polytopes, or of raw points and rays."""
    items = list(polytopes_or_points)
    if items and isinstance(items[0], Polytope):
        dims = {p.dim for p in items}
        if len(dims) > 1:
            raise DimensionMismatchError("mixed dimensions in hull")
        d = dims.pop()
        verts = [v for p in items for v in p.vertices]
        all_rays = [r for p in items for r in p.rays]
        return Polytope.from_generators(d, verts, all_rays)
    if dim is None:
        if not items:
            raise EmptySetError("hull of nothing needs an explicit dim")
        dim = len(items[0])
    return Polytope.from_generators(dim, items, rays)


# -- least-distance projector -------------------------------------------------


def _affine_solve(B: np.ndarray, simplex_mask: np.ndarray, z: np.ndarray):
    """min ||B theta - z||^2 subject to sum(theta[simplex]) = 1 (signs free)."""
    k = B.shape[1]
    G = B.T @ B
    a = simplex_mask.astype(float)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = G
    kkt[:k, k] = a
    kkt[k, :k] = a
    rhs = np.concatenate([B.T @ z, [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:k]


def _project(V: np.ndarray, R: np.ndarray, z: np.ndarray, max_iter: int = 400):
    """Nearest point of conv(V)+cone(R) to z.

    Returns (distance, point, vertex weights, ray weights).
    """
    nv = V.shape[0]
    if nv == 0:
        return math.inf, None, None, None
    scale_ref = 1.0 + float(np.max(np.abs(V))) + float(np.max(np.abs(z), initial=0.0))
    if R.size:
        scale_ref = max(scale_ref, 1.0 + float(np.max(np.abs(R))))
    eps = 1e-12 * scale_ref

    d2 = np.sum((V - z) ** 2, axis=1)
    start = int(np.argmin(d2))
    support_v = [start]
    support_r: list = []
    lam = np.zeros(nv)
    mu = np.zeros(R.shape[0])
    lam[start] = 1.0
    p = V[start].copy()

    for _ in range(max_iter):
        # inner loop: affine-minimize over the support, prune negatives
        for _inner in range(4 * (len(support_v) + len(support_r)) + 8):
            cols = [V[i] for i in support_v] + [R[j] for j in support_r]
            B = np.column_stack(cols) if cols else np.zeros((V.shape[1], 0))
            mask = np.array(
                [True] * len(support_v) + [False] * len(support_r), dtype=bool
            )
            theta = _affine_solve(B, mask, z)
            if theta.size == 0:
                break
            if np.min(theta) >= -1e-13:
                theta = np.clip(theta, 0.0, None)
                ssum = theta[mask].sum()
                if ssum > 0:
                    theta[mask] /= ssum
                lam = np.zeros(nv)
                mu = np.zeros(R.shape[0])
                for w, i in zip(theta[: len(support_v)], support_v):
                    lam[i] = w
                for w, j in zip(theta[len(support_v):], support_r):
                    mu[j] = w
                p = B @ theta
                break
            # line search toward the affine solution keeping weights >= 0
            cur = np.array(
                [lam[i] for i in support_v] + [mu[j] for j in support_r]
            )
            delta = theta - cur
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(delta < -1e-16, cur / -delta, np.inf)
            t = min(1.0, float(np.min(steps)))
            cur = np.clip(cur + t * delta, 0.0, None)
            keep_v, keep_r = [], []
            for w, i in zip(cur[: len(support_v)], support_v):
                lam[i] = w
                if w > 1e-14:
                    keep_v.append(i)
                else:
                    lam[i] = 0.0
            for w, j in zip(cur[len(support_v):], support_r):
                mu[j] = w
                if w > 1e-14:
                    keep_r.append(j)
                else:
                    mu[j] = 0.0
            if not keep_v:  # keep at least one vertex to carry the simplex
                best = support_v[int(np.argmax(cur[: len(support_v)]))]
                keep_v = [best]
                lam[best] = max(lam[best], 1e-300)
            support_v, support_r = keep_v, keep_r
            cols = [V[i] for i in support_v] + [R[j] for j in support_r]
            weights = np.array([lam[i] for i in support_v] + [mu[j] for j in support_r])
            ssum = sum(lam[i] for i in support_v)
            if ssum > 0:
                for i in support_v:
                    lam[i] /= ssum
                weights = np.array(
                    [lam[i] for i in support_v] + [mu[j] for j in support_r]
                )
            p = np.column_stack(cols) @ weights

        grad = p - z
        # linear minimization oracle: rays first (cone directions), then vertices
        added = False
        if R.size:
            ray_scores = R @ grad
            jbest = int(np.argmin(ray_scores))
            if ray_scores[jbest] < -eps and jbest not in support_r:
                support_r.append(jbest)
                added = True
        if not added:
            vert_scores = V @ grad
            ibest = int(np.argmin(vert_scores))
            if vert_scores[ibest] < float(grad @ p) - eps and ibest not in support_v:
                support_v.append(ibest)
                added = True
        if not added:
            break

    dist = float(np.linalg.norm(p - z))
    return dist, p, lam, mu


def distance(p: Polytope, v) -> float:
    """Euclidean distance from point v to the set; +inf for the empty set."""
    z = np.asarray(v, dtype=float)
    if z.shape != (p.dim,):
        raise DimensionMismatchError("point dimension mismatch")
    dist, *_ = _project(p.vertex_array(), p.ray_array(), z)
    return dist

def project(p: Polytope, v):
    """Nearest point and its generator weights: (distance, point, lam, mu)."""
    z = np.asarray(v, dtype=float)
    if z.shape != (p.dim,):
        raise DimensionMismatchError("point dimension mismatch")
    return _project(p.vertex_array(), p.ray_array(), z)


def contains(p: Polytope, v, tol: float = 1e-9) -> bool:
    return distance(p, v) <= tol


# -- sampling oracles ---------------------------------------------------------


@dataclass(frozen=True)
class FdClusters:
    """Clustered central-difference gradient estimates of a sampled function."""

    clusters: Tuple[Tuple[float, ...], ...]
    spreads: Tuple[float, ...]
    n_skipped: int

    def __iter__(self):
        return (np.array(c) for c in self.clusters)

    def __len__(self):
        return len(self.clusters)

    def arrays(self):
        return [np.array(c) for c in self.clusters]


def fd_subgradient_samples(
    h: Callable,
    xbar,
    n_dirs: int = 16,
    radius: float = 1e-3,
    step: Optional[float] = None,
    seed: int = 0,
    merge_tol: float = 1e-6,
) -> FdClusters:
    """Limiting-gradient estimates of h near xbar.

    Offsets xbar + radius*u with u drawn uniformly on the sphere from a
    deterministic seed; at each offset a central difference per coordinate
    (step defaults to radius/20).  Offsets whose stencil leaves dom h
    (InfeasibleError) are skipped, which is what makes one-sided domain
    boundaries observable.  Estimates within merge_tol (max-norm) merge
    into clusters reported by their means.
    """
    xbar = np.asarray(xbar, dtype=float)
    n = xbar.size
    if radius <= 0:
        raise ValueError("radius must be positive")
    h_step = radius / 20.0 if step is None else float(step)
    rng = np.random.default_rng(seed)
    if n == 1:
        dirs = np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(n_dirs)])
    else:
        dirs = rng.normal(size=(n_dirs, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def safe_eval(pt):
        try:
            return h(pt)
        except InfeasibleError:
            return None
        except Exception as exc:  # noqa: BLE001 - surface as EvaluationError
            if isinstance(exc, EvaluationError):
                raise
            raise EvaluationError(str(exc)) from exc

    estimates = []
    skipped = 0
    for u in dirs:
        x0 = xbar + radius * u
        grad = np.zeros(n)
        ok = True
        f0 = None
        for c in range(n):
            xp = x0.copy()
            xm = x0.copy()
            xp[c] += h_step
            xm[c] -= h_step
            fp = safe_eval(xp)
            fm = safe_eval(xm)
            if fp is not None and fm is not None:
                grad[c] = (fp - fm) / (2.0 * h_step)
                continue
            # dom boundary: one-sided difference through the offset point
            # when exactly one side of the stencil is feasible
            if f0 is None:
                f0 = safe_eval(x0)
            if f0 is None or (fp is None and fm is None):
                ok = False
                break
            if fp is not None:
                grad[c] = (fp - f0) / h_step
            else:
                grad[c] = (f0 - fm) / h_step
        if ok:
            estimates.append(grad)
        else:
            skipped += 1

    clusters: list = []  # [sum, count, members]
    for g in estimates:
        placed = False
        for cl in clusters:
            mean = cl[0] / cl[1]
            if np.max(np.abs(g - mean)) <= merge_tol:
                cl[0] += g
                cl[1] += 1
                cl[2].append(g)
                placed = True
                break
        if not placed:
            clusters.append([g.copy(), 1, [g]])
    means = tuple(tuple((cl[0] / cl[1]).tolist()) for cl in clusters)
    spreads = tuple(
        float(max(np.max(np.abs(m - cl[0] / cl[1])) for m in cl[2]))
        for cl in clusters
    )
    return FdClusters(means, spreads, skipped)


def lipschitz_estimate(
    h: Callable,
    xbar,
    radius: float,
    n_pairs: int = 200,
    seed: int = 0,
) -> float:
    """Empirical Lipschitz modulus of h on the ball around xbar.

    Max of |h(a)-h(b)|/||a-b|| over seeded sample pairs; returns +inf when
    any evaluation is infeasible (the modulus is then meaningless on the
    full ball).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    xbar = np.asarray(xbar, dtype=float)
    n = xbar.size
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        u = rng.normal(size=n)
        u /= np.linalg.norm(u)
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        a = xbar + radius * rng.uniform() ** (1.0 / n) * u
        b = xbar + radius * rng.uniform() ** (1.0 / n) * v
        gap = np.linalg.norm(a - b)
        if gap < 1e-12:
            continue
        try:
            ratio = abs(h(a) - h(b)) / gap
        except InfeasibleError:
            return math.inf
        best = max(best, float(ratio))
    return best


def normal_cone_polyhedral(theta1, xbar, tol_active: float = 1e-8,
                           n: Optional[int] = None) -> Polytope:
    """Normal cone to {x : theta1(x) <= 0} at xbar for affine theta1.

    For a convex polyhedral set the limiting and convexified normal cones
    coincide: the cone generated by the gradients of the active
    constraints, {0} when none are active.
    """
    xbar = np.asarray(xbar, dtype=float)
    if n is None:
        n = xbar.size
    rays = []
    for t in theta1:
        coeffs = affine_coefficients(t, n, 0)
        if coeffs is None:
            raise NotPolyhedralError("upper-level constraint is not affine")
        c0, cx, _ = coeffs
        val = c0 + float(cx @ xbar)
        if val > tol_active * (1.0 + abs(val)):
            raise InfeasiblePointError(f"theta1 violated at xbar (value {val})")
        if val >= -tol_active * (1.0 + abs(val)) and np.max(np.abs(cx)) > 0:
            rays.append(cx.copy())
    return Polytope.from_generators(n, [np.zeros(n)], rays)
