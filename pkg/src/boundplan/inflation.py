"""Free-space polytopes around seed points, ellipsoids and point hulls.

Three constructions are provided:

* :func:`inflate` alternates a separating-hyperplane step with a
  maximum-volume inscribed ellipsoid step, starting from a small ball at
  the seed.
* :func:`mvie_fixed_mid` is the ellipsoid step with its center pinned, so
  the resulting set always contains the seed.
* :func:`set_convex_hull` separates a given convex hull of points from
  every obstacle with one half-space per obstacle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySet, HullInCollision, SeedInCollision, SeedNotInterior, SeedOutsideDomain, Unbounded
from .geometry import ClosestPoints, ConvexBody, ConvexPolytope, Ellipsoid, closest_points, min_norm_point

log = logging.getLogger(__name__)

# symmetric 3x3 basis: diagonal entries first, then (0,1), (0,2), (1,2)
_SYM_IDX = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
_E = np.zeros((6, 3, 3))
for _k, (_i, _j) in enumerate(_SYM_IDX):
    _E[_k, _i, _j] = 1.0
    _E[_k, _j, _i] = 1.0


def _sym_from_vec(c):
    return np.einsum("k,kij->ij", c, _E)


def _vec_from_sym(C):
    return np.array([C[i, j] for i, j in _SYM_IDX])


@dataclass(frozen=True)
class InflationConfig:
    max_iterations: int = 10
    volume_rel_tol: float = 1e-2
    obstacle_margin: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.volume_rel_tol > 0:
            raise ValueError("volume_rel_tol must be > 0")
        if self.obstacle_margin < 0:
            raise ValueError("obstacle_margin must be >= 0")


@dataclass
class Workspace:
    """Bounded box domain plus convex obstacles."""

    domain: ConvexPolytope
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self.obstacles = [o if isinstance(o, ConvexBody) else ConvexBody(o) for o in self.obstacles]

    @classmethod
    def box(cls, lo, hi, obstacles=()):
        ws = cls(ConvexPolytope.box(lo, hi), list(obstacles))
        ws._box = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        return ws

    @property
    def box_bounds(self):
        bx = getattr(self, "_box", None)
        if bx is None:
            bx = self.domain.bounds()
            self._box = bx
        return bx


# --- maximum-volume inscribed ellipsoid ---------------------------------------

def _check_poly(poly: ConvexPolytope):
    if poly.n_rows == 0:
        raise Unbounded("polytope without rows is unbounded")
    center, radius = poly.chebyshev()
    if radius < -1e-9:
        raise EmptySet(f"polytope is empty (Chebyshev radius {radius:.3g})")
    if radius >= 1e5:
        raise Unbounded("polytope contains arbitrarily large balls")
    if radius <= 1e-12:
        raise EmptySet("polytope has no interior")
    if not poly.is_bounded():
        raise Unbounded("polytope is unbounded")
    return center, radius


def _barrier_newton(A, b, c0, p0, fixed_p, gap_tol=1e-9, max_newton=100):
    """Path-following barrier method for max log det C s.t. ||C a|| + a^T p <= b.

    Works in coordinates where the inscribed ball is the unit ball. Uses the
    barrier -log((b - a^T p)^2 - ||C a||^2) per row, which has parameter 2.
    """
    S = A.shape[0]
    M = np.einsum("kij,sj->sik", _E, A)  # C a_s = M_s c
    nv = 6 if fixed_p else 9

    def unpack(z):
        return (z[:6], p0) if fixed_p else (z[:6], z[6:])

    def evaluate(z, tb, need_derivs):
        c, p = unpack(z)
        C = _sym_from_vec(c)
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            return None
        t = b - A @ p
        u = np.einsum("sik,k->si", M, c)
        g = t * t - np.einsum("si,si->s", u, u)
        if np.any(t <= 0) or np.any(g <= 0):
            return None
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        # scaled by 1/tb so line-search comparisons stay O(1)
        f = -logdet - np.sum(np.log(g)) / tb
        if not need_derivs:
            return f
        Cinv = np.linalg.inv(C)
        X = np.einsum("ij,kjl->kil", Cinv, _E)
        grad_ld = np.einsum("kii->k", X)
        hess_ld = -np.einsum("kij,lji->kl", X, X)
        Jg = np.zeros((S, nv))
        Jg[:, :6] = -2.0 * np.einsum("sik,si->sk", M, u)
        if not fixed_p:
            Jg[:, 6:] = -2.0 * t[:, None] * A
        w = 1.0 / g
        grad = np.zeros(nv)
        grad[:6] = -tb * grad_ld
        grad -= Jg.T @ w
        H = np.zeros((nv, nv))
        H[:6, :6] = -tb * hess_ld
        Jw = Jg * w[:, None]
        H += Jw.T @ Jw
        # -sum(hess g / g)
        Mw = M * np.sqrt(2.0 * w)[:, None, None]
        H[:6, :6] += np.einsum("sik,sil->kl", Mw, Mw)
        if not fixed_p:
            H[6:, 6:] -= 2.0 * (A * w[:, None]).T @ A
        return f, grad / tb, H / tb

    z = np.concatenate([c0, p0]) if not fixed_p else c0.copy()
    tb = 1.0
    mu = 20.0
    newton_steps = 0
    while True:
        for _ in range(max_newton):
            f, grad, H = evaluate(z, tb, True)
            try:
                dz = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec = -grad @ dz
            newton_steps += 1
            # decrement of the unscaled self-concordant function
            if 0.5 * dec * tb <= 1e-8 or dec <= 1e-13 * max(1.0, abs(f)):
                break
            step = 1.0
            while True:
                fn = evaluate(z + step * dz, tb, False)
                if fn is not None and fn <= f - 0.25 * step * dec:
                    break
                step *= 0.5
                if step < 1e-9:
                    break
            if step < 1e-9:
                # no representable progress left at this barrier weight
                break
            z = z + step * dz
            if np.max(np.abs(z[:3])) > 1e8:
                raise Unbounded("ellipsoid grows without bound")
        if 2.0 * S / tb <= gap_tol:
            break
        tb *= mu
    c, p = unpack(z)
    return _sym_from_vec(c), np.array(p, dtype=float), newton_steps


def mvie(poly: ConvexPolytope) -> Ellipsoid:
    """Maximum-volume ellipsoid inscribed in a bounded polytope."""
    center, radius = _check_poly(poly)
    Ab = poly.A
    bs = (poly.b - Ab @ center) / radius
    C, p, _ = _barrier_newton(Ab, bs, _vec_from_sym(0.9 * np.eye(3)), np.zeros(3), fixed_p=False)
    return Ellipsoid(radius * C, center + radius * p)


def mvie_fixed_mid(poly: ConvexPolytope, p) -> Ellipsoid:
    """Maximum-volume inscribed ellipsoid whose center is pinned at ``p``."""
    p = np.asarray(p, dtype=float)
    d = poly.halfspace_distances(p)
    if poly.n_rows == 0:
        raise Unbounded("polytope without rows is unbounded")
    if np.max(d) >= -1e-9:
        raise SeedNotInterior(f"center is not strictly inside (max distance {np.max(d):.3g})")
    if not poly.is_bounded():
        raise Unbounded("polytope is unbounded")
    r = float(-np.max(d))
    bs = -d / r
    C, _, _ = _barrier_newton(poly.A, bs, _vec_from_sym(0.9 * np.eye(3)), np.zeros(3), fixed_p=True)
    return Ellipsoid(r * C, p.copy())


# --- separating hyperplanes ---------------------------------------------------

def _row_separates(a, b, V, slack):
    return float(np.min(V @ a)) >= b + slack - 1e-12


def separating_polytope(e: Ellipsoid, ws: Workspace, margin: float = 0.0) -> ConvexPolytope:
    """Polytope containing ``e`` with one tangent half-space per close obstacle.

    Obstacles are grown by the cube ``[-margin, margin]^3`` before the
    tangent planes are placed, so every row keeps the ellipsoid inside.
    """
    Cinv = np.linalg.inv(e.C)
    bodies = [o.inflated_box(margin) for o in ws.obstacles]
    found = []
    for k, body in enumerate(bodies):
        W = (body.vertices - e.p) @ Cinv.T
        y, _ = min_norm_point(W)
        dist = float(np.linalg.norm(y))
        found.append((dist, k, y))
    found.sort(key=lambda t: (t[0], t[1]))
    rows_a, rows_b = [], []
    cand_a = list(ws.domain.A)
    cand_b = list(ws.domain.b)
    for dist, k, y in found:
        if dist < 1.0 - 1e-6:
            raise SeedInCollision(f"ellipsoid overlaps obstacle {k}", obstacle_index=k)
        V = bodies[k].vertices
        if any(_row_separates(a, b, V, 0.0) for a, b in zip(cand_a, cand_b)):
            continue
        a = Cinv.T @ y
        a = a / np.linalg.norm(a)
        b = float(np.min(V @ a))
        rows_a.append(a)
        rows_b.append(b)
        cand_a.append(a)
        cand_b.append(b)
    A = np.vstack(rows_a + [ws.domain.A]) if rows_a else ws.domain.A
    b = np.concatenate([rows_b, ws.domain.b]) if rows_b else ws.domain.b
    return ConvexPolytope(A, b)


@dataclass
class InflationResult:
    poly: ConvexPolytope
    ellipsoid: Ellipsoid
    logdet_history: list
    iterations: int

    def __iter__(self):
        return iter((self.poly, self.ellipsoid))


def _check_seed(seed, ws: Workspace, margin):
    if not ws.domain.contains(seed, tol=0.0) or np.max(ws.domain.halfspace_distances(seed)) >= 0:
        raise SeedOutsideDomain(f"seed {np.round(seed, 6).tolist()} is outside the domain")
    clearance = float(-np.max(ws.domain.halfspace_distances(seed)))
    pt = ConvexBody([seed])
    for k, obs in enumerate(ws.obstacles):
        body = obs.inflated_box(margin)
        d = closest_points(pt, body).distance
        if d <= 1e-12:
            raise SeedInCollision(f"seed lies inside obstacle {k}", obstacle_index=k)
        clearance = min(clearance, d)
    return clearance


def inflate(seed, ws: Workspace, mode: str = "mvie", cfg: InflationConfig | None = None) -> InflationResult:
    """Grow a collision-free polytope around ``seed``.

    ``mode`` is ``"mvie"`` or ``"fixed_mid"``. The result unpacks as
    ``(poly, ellipsoid)`` and also records the log-volume history.
    """
    cfg = cfg or InflationConfig()
    seed = np.asarray(seed, dtype=float)
    if mode not in ("mvie", "fixed_mid"):
        raise ValueError(f"unknown inflation mode {mode!r}")
    clearance = _check_seed(seed, ws, cfg.obstacle_margin)
    e = Ellipsoid.ball(seed, 0.5 * clearance)
    history = [e.logdet]
    poly = None
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        poly = separating_polytope(e, ws, cfg.obstacle_margin)
        e_new = mvie(poly) if mode == "mvie" else mvie_fixed_mid(poly, seed)
        gain = e_new.logdet - history[-1]
        if gain < -1e-6:
            log.debug("ellipsoid volume decreased by %.3g (solver tolerance)", -gain)
        e = e_new
        history.append(e.logdet)
        if np.expm1(gain) < cfg.volume_rel_tol:
            break
    return InflationResult(poly, e, history, it)


# --- sets around point hulls ---------------------------------------------------

ClosestFn = Callable[[ConvexBody, ConvexBody], ClosestPoints]


def set_convex_hull(points, ws: Workspace, margin: float = 0.0,
                    closest: ClosestFn | None = None) -> ConvexPolytope:
    """Half-space set around ``hull(points)`` that excludes every obstacle.

    Each non-skipped obstacle contributes the plane through its closest point
    to the hull, normal to the closest-pair direction, moved toward the hull
    by ``margin``. ``closest`` may replace the generic closest-pair routine.
    """
    body = points if isinstance(points, ConvexBody) else ConvexBody(points)
    closest = closest or closest_points
    pairs = []
    for k, obs in enumerate(ws.obstacles):
        cp = closest(body, obs)
        pairs.append((cp.distance, k, cp))
    pairs.sort(key=lambda t: (t[0], t[1]))
    rows_a, rows_b = [], []
    cand = [(a, b) for a, b in zip(ws.domain.A, ws.domain.b)]
    for d, k, cp in pairs:
        if d <= 1e-12 or d < margin - 1e-9:
            raise HullInCollision(k, distance=d)
        V = ws.obstacles[k].vertices
        # a candidate row separates when the obstacle lies beyond its touching plane
        if any(_row_separates(a, b, V, margin) for a, b in cand[: ws.domain.n_rows]):
            continue
        if any(_row_separates(a, b + margin, V, 0.0) for a, b in zip(rows_a, rows_b)):
            continue
        a = (cp.pB - cp.pA) / d
        b = float(min(a @ cp.pB, np.min(V @ a))) - margin
        rows_a.append(a)
        rows_b.append(b)
    A = np.vstack(rows_a + [ws.domain.A]) if rows_a else ws.domain.A
    b = np.concatenate([rows_b, ws.domain.b]) if rows_b else ws.domain.b
    return ConvexPolytope(A, b)


def obstacle_rows(poly: ConvexPolytope, ws: Workspace) -> int:
    """Number of rows in ``poly`` that do not come from the domain."""
    return poly.n_rows - ws.domain.n_rows


def excludes_obstacles(poly: ConvexPolytope, obstacles: Sequence[ConvexBody], tol=1e-9):
    """True when every obstacle lies entirely beyond at least one row."""
    for obs in obstacles:
        D = obs.vertices @ poly.A.T - poly.b
        if not np.any(np.all(D >= -tol, axis=0)):
            return False
    return True
