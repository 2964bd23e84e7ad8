"""Low-dimensional convex geometry and SO(3) helpers.

Everything here works on plain numpy arrays in three dimensions. Polytopes
are stored in half-space form with unit-norm rows so that
``A @ x - b`` is a metric signed distance to each face plane.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.transform import Rotation as _SciRot

from .errors import EmptySet, Unbounded

ROW_NORM_TOL = 1e-9
EMPTY_TOL = 1e-9
_RADIUS_CAP = 1e6


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3) if x.ndim == 1 else x


class ConvexPolytope:
    """Intersection of half-spaces ``{x : A x <= b}``.

    Rows are normalized on construction. Zero rows are dropped when trivially
    satisfied (``b >= 0``) and rejected otherwise.
    """

    __slots__ = ("A", "b")

    def __init__(self, A, b):
        A = np.asarray(A, dtype=float).reshape(-1, 3)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        norms = np.linalg.norm(A, axis=1)
        zero = norms < 1e-14
        if np.any(zero & (b < 0)):
            raise ValueError("zero row with negative offset describes an empty set")
        keep = ~zero
        A = A[keep] / norms[keep, None]
        b = b[keep] / norms[keep]
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        eye = np.eye(3)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def n_rows(self):
        return self.A.shape[0]

    def __repr__(self):
        return f"ConvexPolytope(rows={self.n_rows})"

    def halfspace_distances(self, x):
        """Signed distances ``A x - b``; accepts one point or an (n, 3) batch."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.A @ x - self.b
        return x @ self.A.T - self.b

    def contains(self, x, tol=1e-9):
        d = self.halfspace_distances(x)
        if d.size == 0:
            return True if np.ndim(x) == 1 else np.ones(len(x), dtype=bool)
        return np.all(d <= tol, axis=-1)

    def max_violation(self, x):
        d = self.halfspace_distances(x)
        if d.size == 0:
            return -np.inf
        return float(np.max(d))

    def intersect(self, other: "ConvexPolytope") -> "ConvexPolytope":
        return ConvexPolytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    def shifted(self, offsets):
        """Polytope with every row offset lowered by ``offsets`` (broadcast)."""
        return ConvexPolytope(self.A, self.b - np.asarray(offsets, dtype=float))

    def chebyshev(self):
        """Center and radius of the largest inscribed ball.

        A negative radius measures how far the rows are from being jointly
        satisfiable.
        """
        if self.n_rows == 0:
            return np.zeros(3), np.inf
        c = np.array([0.0, 0.0, 0.0, -1.0])
        A_ub = np.hstack([self.A, np.ones((self.n_rows, 1))])
        bounds = [(None, None)] * 3 + [(None, _RADIUS_CAP)]
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"Chebyshev LP failed: {res.message}")
        return res.x[:3].copy(), float(res.x[3])

    def is_empty(self, tol=EMPTY_TOL):
        """Return ``(empty, witness, radius)``; ``witness`` is None when empty."""
        center, radius = self.chebyshev()
        if radius < -tol:
            return True, None, radius
        return False, center, radius

    def support(self, direction):
        """``max d^T x`` over the polytope; raises :class:`Unbounded`."""
        direction = np.asarray(direction, dtype=float)
        res = linprog(-direction, A_ub=self.A, b_ub=self.b,
                      bounds=[(None, None)] * 3, method="highs")
        if res.status == 3:
            raise Unbounded(f"unbounded along {direction}")
        if res.status == 2:
            raise EmptySet("polytope is empty")
        if res.status != 0:
            raise RuntimeError(res.message)
        return float(-res.fun), res.x.copy()

    def bounds(self):
        """Axis-aligned bounding box from six LPs."""
        lo = np.empty(3)
        hi = np.empty(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            hi[k] = self.support(e)[0]
            lo[k] = -self.support(-e)[0]
        return lo, hi

    def is_bounded(self):
        """Bounded iff the rows positively span space: ``A^T y = 0`` with ``y >= 1``.

        Valid for non-empty polytopes only.
        """
        if self.n_rows < 4 or np.linalg.matrix_rank(self.A) < 3:
            return False
        res = linprog(np.zeros(self.n_rows), A_eq=self.A.T, b_eq=np.zeros(3),
                      bounds=[(1.0, None)] * self.n_rows, method="highs")
        return res.status == 0

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["b"])


class Ellipsoid:
    """``{p + C u : ||u|| <= 1}`` with symmetric positive definite ``C``."""

    __slots__ = ("C", "p")

    def __init__(self, C, p):
        C = np.asarray(C, dtype=float).reshape(3, 3)
        p = np.asarray(p, dtype=float).reshape(3)
        if np.max(np.abs(C - C.T)) > 1e-9:
            raise ValueError("shape matrix must be symmetric")
        C = 0.5 * (C + C.T)
        if np.linalg.eigvalsh(C)[0] <= 0:
            raise ValueError("shape matrix must be positive definite")
        C.setflags(write=False)
        p.setflags(write=False)
        self.C = C
        self.p = p

    @classmethod
    def ball(cls, center, radius):
        return cls(radius * np.eye(3), center)

    def __repr__(self):
        return f"Ellipsoid(p={self.p.round(4).tolist()}, semiaxes={self.semiaxes().round(4).tolist()})"

    @property
    def det(self):
        return float(np.linalg.det(self.C))

    @property
    def logdet(self):
        return float(np.linalg.slogdet(self.C)[1])

    def semiaxes(self):
        return np.linalg.eigvalsh(self.C)

    def support(self, a):
        """``max a^T x`` over the ellipsoid."""
        a = np.asarray(a, dtype=float)
        return float(np.linalg.norm(self.C @ a) + a @ self.p)

    def contains(self, x, tol=1e-9):
        u = np.linalg.solve(self.C, (_as_points(x) - self.p).T).T
        inside = np.linalg.norm(u, axis=1) <= 1.0 + tol
        return inside[0] if np.ndim(x) == 1 else inside

    def to_dict(self):
        return {"C": self.C.tolist(), "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["C"], d["p"])


class ConvexBody:
    """Convex hull of a finite vertex list (duplicates merged at 1e-12)."""

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = _as_points(vertices)
        if v.shape[0] == 0:
            raise ValueError("a convex body needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        keep = []
        for i, x in enumerate(v):
            if not any(np.max(np.abs(x - v[j])) <= 1e-12 for j in keep):
                keep.append(i)
        v = v[keep].copy()
        v.setflags(write=False)
        self.vertices = v

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        corners = [[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]]
                   for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        return cls(corners)

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"ConvexBody(n_vertices={len(self.vertices)})"

    def translated(self, t):
        return ConvexBody(self.vertices + np.asarray(t, dtype=float))

    def inflated_box(self, margin):
        """Hull of the vertices grown by the cube ``[-margin, margin]^3``."""
        if margin <= 0:
            return self
        corners = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], float)
        pts = (self.vertices[:, None, :] + margin * corners[None]).reshape(-1, 3)
        return ConvexBody(pts)


def min_norm_point(P, tol=1e-12, max_iter=1000):
    """Point of minimum Euclidean norm in the convex hull of the rows of ``P``.

    Wolfe's active-set algorithm. Returns ``(x, weights)`` with
    ``x = weights @ P``, weights on the unit simplex.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n == 1:
        return P[0].copy(), np.ones(1)
    sq = np.einsum("ij,ij->i", P, P)
    scale = max(float(sq.max()), 1e-300)
    S = [int(np.argmin(sq))]
    lam = np.ones(1)
    x = P[S[0]].copy()
    best = float(x @ x)
    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            mu = _affine_min_weights(P[S])
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            ratios = np.full(len(S), np.inf)
            denom = lam - mu
            ok = neg & (denom > 0)
            ratios[ok] = lam[ok] / denom[ok]
            k = int(np.argmin(ratios))
            theta = min(1.0, ratios[k]) if np.isfinite(ratios[k]) else 0.0
            lam = lam + theta * (mu - lam)
            lam[k] = 0.0
            keep = lam > 1e-14
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep]
            lam = lam / lam.sum()
            if len(S) == 1:
                break
        x = lam @ P[S]
        nx = float(x @ x)
        if nx >= best * (1.0 - 1e-15) and nx > 0 and len(S) > 1 and nx >= best:
            break
        best = min(best, nx)
    w = np.zeros(n)
    w[S] = lam
    return lam @ P[S], w


def _affine_min_weights(Q):
    # min ||Q^T mu|| subject to sum(mu) = 1
    if len(Q) == 1:
        return np.ones(1)
    D = (Q[1:] - Q[0]).T
    beta = np.linalg.lstsq(D, -Q[0], rcond=None)[0]
    return np.concatenate([[1.0 - beta.sum()], beta])


class ClosestPoints(NamedTuple):
    pA: np.ndarray
    pB: np.ndarray
    distance: float


def _body_key(v):
    return (v.shape[0], tuple(v.ravel().tolist()))


def closest_points(bodyA: ConvexBody, bodyB: ConvexBody) -> ClosestPoints:
    """Closest pair between two vertex hulls.

    Symmetric by construction: the pair is always solved in a canonical
    argument order.
    """
    VA = bodyA.vertices if isinstance(bodyA, ConvexBody) else _as_points(bodyA)
    VB = bodyB.vertices if isinstance(bodyB, ConvexBody) else _as_points(bodyB)
    if _body_key(VB) < _body_key(VA):
        pB, pA, d = _closest_points(VB, VA)
        return ClosestPoints(pA, pB, d)
    return ClosestPoints(*_closest_points(VA, VB))


def _closest_points(VA, VB):
    nA, nB = len(VA), len(VB)
    diff = (VA[:, None, :] - VB[None, :, :]).reshape(-1, 3)
    _, w = min_norm_point(diff)
    W = w.reshape(nA, nB)
    pA = W.sum(axis=1) @ VA
    pB = W.sum(axis=0) @ VB
    d = float(np.linalg.norm(pA - pB))
    scale = max(1.0, float(np.abs(diff).max()))
    if d <= 1e-12 * scale:
        pB = pA.copy()
        d = 0.0
    return pA, pB, d


def segment_closest_points(s0, s1, body: ConvexBody) -> ClosestPoints:
    """Closest pair between the segment ``[s0, s1]`` and a vertex hull.

    The segment is the two-point hull; the segment parameter of the
    closest point is read off the weight mass carried by ``s1``.
    """
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    V = body.vertices
    n = len(V)
    diff = np.vstack([s0 - V, s1 - V])
    _, w = min_norm_point(diff)
    t = float(np.clip(w[n:].sum(), 0.0, 1.0))
    p_seg = s0 + t * (s1 - s0)
    p_body = (w[:n] + w[n:]) @ V
    d = float(np.linalg.norm(p_seg - p_body))
    if d <= 1e-12 * max(1.0, float(np.abs(diff).max())):
        p_body = p_seg.copy()
        d = 0.0
    return ClosestPoints(p_seg, p_body, d)


def point_in_body(x, body: ConvexBody, tol=1e-12):
    return closest_points(ConvexBody([x]), body).distance <= tol


def nnls(E, f, tol=1e-13, max_iter=None):
    """Lawson-Hanson active-set solution of ``min ||E u - f||`` with ``u >= 0``."""
    m, n = E.shape
    max_iter = max_iter or 6 * n + 20
    u = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    scale = max(1.0, float(np.abs(E).max()) * max(1.0, float(np.abs(f).max())))
    for _ in range(max_iter):
        w = E.T @ (f - E @ u)
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= tol * scale:
            break
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(E[:, passive], f, rcond=None)[0]
            if np.all(z[passive] > 0):
                u = z
                break
            # step back to the first variable that hits zero, then drop it
            neg = passive & (z <= 0)
            step = np.min(u[neg] / (u[neg] - z[neg]))
            u = u + step * (z - u)
            passive &= u > tol
            u[~passive] = 0.0
    return u, float(np.linalg.norm(E @ u - f))


def project_to_polytope(target, poly: ConvexPolytope):
    """Euclidean projection of ``target`` onto ``poly``.

    Solved as a least-distance program through Lawson-Hanson NNLS, which
    is finite and exact up to rounding. Raises :class:`EmptySet`.
    """
    t = np.asarray(target, dtype=float)
    if poly.n_rows == 0:
        return t.copy()
    h = poly.A @ t - poly.b
    if np.all(h <= 0):
        return t.copy()
    # min ||y|| s.t. G y >= h with G = -A; x = t + y
    E = np.vstack([-poly.A.T, h[None, :]])
    f = np.zeros(4)
    f[3] = 1.0
    u, _ = nnls(E, f)
    r = E @ u - f
    if abs(r[3]) < 1e-12:
        raise EmptySet("cannot project onto an empty polytope")
    return t - r[:3] / r[3]


def halfspace_distances(poly: ConvexPolytope, x):
    return poly.halfspace_distances(x)


def intersect(a: ConvexPolytope, b: ConvexPolytope) -> ConvexPolytope:
    return a.intersect(b)


def is_empty(poly: ConvexPolytope):
    return poly.is_empty()


# --- rotations ---------------------------------------------------------------

def hat(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(K):
    return np.array([K[2, 1] - K[1, 2], K[0, 2] - K[2, 0], K[1, 0] - K[0, 1]]) * 0.5


def check_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return R


def rotation_exp(axis, angle):
    """Rodrigues formula for a unit ``axis``."""
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be unit norm, got |axis|={np.linalg.norm(axis):.6g}")
    K = hat(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def cross(a, b):
    """Broadcasting 3-vector cross product; much cheaper than ``np.cross`` on small inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def rotate_about(axis, angle, v):
    """Rotate vector(s) ``v`` about a unit ``axis`` without forming matrices."""
    v = np.asarray(v, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    along = (v @ axis)[..., None] * axis if v.ndim > 1 else (v @ axis) * axis
    return along + c * (v - along) + s * cross(axis, v)


class Geodesic(NamedTuple):
    omega: np.ndarray
    theta: float
    flag: str  # "", "identity" or "antipodal"


def rotation_log(R):
    """Axis-angle of ``R`` with angle in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_t))
    w = vee(R)  # sin(theta) * axis
    if theta < 1e-12:
        return Geodesic(np.array([1.0, 0.0, 0.0]), 0.0, "identity")
    if theta < 0.5 * np.pi:
        return Geodesic(w / np.linalg.norm(w), theta, "")
    # (R + R^T)/2 = cos I + (1 - cos) w w^T; the +1 eigenvector of R
    B = (0.5 * (R + R.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis = axis / np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    flag = "antipodal" if np.pi - theta < 1e-9 else ""
    if flag:
        theta = np.pi
    return Geodesic(axis, theta, flag)


def geodesic(R0, Rf) -> Geodesic:
    """Constant spatial axis and angle taking ``R0`` to ``Rf``."""
    return rotation_log(np.asarray(Rf, dtype=float) @ np.asarray(R0, dtype=float).T)


def quat_to_matrix(q):
    """(w, x, y, z) unit quaternion to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float)
    return _SciRot.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(R):
    x, y, z, w = _SciRot.from_matrix(np.asarray(R, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return q if q[0] >= 0 else -q
