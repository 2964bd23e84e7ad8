"""Piecewise reference path: positions, orientations and corner blends.

A path with set sequence ``S_0 .. S_N`` has via points ``q_0 .. q_{N+1}``
(``q_0`` the start, ``q_{N+1}`` the goal) and one straight segment
``[q_k, q_{k+1}]`` per set. Along segment ``k`` the orientation rotates
about a fixed axis by ``alphas[k]``, linearly in the segment-local
parameter ``s`` in ``[0, 1]``.

The path parameter ``phi`` is arc length. Geometry is stored as a list of
pieces (lines, clothoid halves) each carrying the segment index and the
``s`` range it maps onto, so orientation stays defined after smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import fresnel

from .geometry import ConvexPolytope, cross, rotate_about, rotation_exp

_SQRT_PI = np.sqrt(np.pi)


# --- extremum of a line-plus-sinusoid ------------------------------------------

def trig_extremum(c1, P, Q, theta0, alpha, maximize=False):
    """Minimizer over ``s`` in [0, 1] of ``c1 s + P cos(u) + Q sin(u)``, ``u = theta0 + alpha s``.

    Exact: the stationary points solve ``sin(u - psi) = c1 / (alpha K)``
    and are enumerated in closed form together with both endpoints.
    Returns ``(s, value)``.
    """
    sign = -1.0 if maximize else 1.0
    c1, P, Q = sign * c1, sign * P, sign * Q

    def h(s):
        u = theta0 + alpha * s
        return c1 * s + P * np.cos(u) + Q * np.sin(u)

    cands = [0.0, 1.0]
    K = np.hypot(P, Q)
    if abs(alpha) > 1e-15 and K > 1e-15:
        r = c1 / (alpha * K)
        if abs(r) <= 1.0:
            psi = np.arctan2(Q, P)
            base = np.arcsin(r)
            lo, hi = sorted((theta0, theta0 + alpha))
            for w0 in (base, np.pi - base):
                u0 = w0 + psi
                n_lo = int(np.ceil((lo - u0) / (2 * np.pi)))
                n_hi = int(np.floor((hi - u0) / (2 * np.pi)))
                for n in range(n_lo, n_hi + 1):
                    s = (u0 + 2 * np.pi * n - theta0) / alpha
                    if 0.0 <= s <= 1.0:
                        cands.append(float(s))
    vals = [h(s) for s in cands]
    i = int(np.argmin(vals))
    return cands[i], sign * vals[i]


def trig_extremum_batch(c1, P, Q, theta0, alpha, maximize=False):
    """Vectorized :func:`trig_extremum` for arrays of equal shape (|alpha| <= 2 pi)."""
    sign = -1.0 if maximize else 1.0
    c1, P, Q = sign * np.asarray(c1, float), sign * np.asarray(P, float), sign * np.asarray(Q, float)
    theta0 = np.asarray(theta0, float)
    alpha = np.broadcast_to(np.asarray(alpha, float), c1.shape)
    m = c1.shape[0]
    K = np.hypot(P, Q)
    psi = np.arctan2(Q, P)
    ok = (np.abs(alpha) > 1e-15) & (K > 1e-15)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(ok, c1 / (alpha * np.where(ok, K, 1.0)), 2.0)
    ok &= np.abs(r) <= 1.0
    base = np.arcsin(np.clip(r, -1.0, 1.0))
    lo = np.minimum(theta0, theta0 + alpha)
    cands = [np.zeros(m), np.ones(m)]
    safe_alpha = np.where(ok, alpha, 1.0)
    for w0 in (base, np.pi - base):
        u0 = w0 + psi
        n_lo = np.ceil((lo - u0) / (2 * np.pi))
        for dn in range(3):
            s = (u0 + 2 * np.pi * (n_lo + dn) - theta0) / safe_alpha
            s = np.where(ok & (s >= 0.0) & (s <= 1.0), s, 0.0)
            cands.append(s)
    S = np.stack(cands, axis=1)
    U = theta0[:, None] + alpha[:, None] * S
    H = c1[:, None] * S + P[:, None] * np.cos(U) + Q[:, None] * np.sin(U)
    i = np.argmin(H, axis=1)
    idx = np.arange(m)
    return S[idx, i], sign * H[idx, i]


def hull_term_coeffs(a, v, omega):
    """Split ``a^T Exp(omega theta) v`` into ``const + P cos(theta) + Q sin(theta)``."""
    along = (omega @ v) * omega
    return float((a @ omega) * (omega @ v)), float(a @ (v - along)), float(a @ cross(omega, v))


def segment_extremum(q0, q1, theta0, alpha, omega, v, a, maximize=False):
    """Extremum over ``s`` of ``a^T (q0 + s (q1 - q0) + Exp(omega (theta0 + alpha s)) v)``."""
    c0, P, Q = hull_term_coeffs(a, v, omega)
    s, val = trig_extremum(float(a @ (q1 - q0)), P, Q, theta0, alpha, maximize)
    return s, val + float(a @ q0) + c0


# --- pieces -------------------------------------------------------------------

@dataclass
class LinePiece:
    start: np.ndarray
    direction: np.ndarray
    length: float
    k: int
    s0: float
    s1: float
    kind: str = "line"

    def point(self, u):
        return self.start + np.multiply.outer(u, self.direction)

    def tangent(self, u):
        return np.broadcast_to(self.direction, np.shape(u) + (3,)).copy()

    def curvature(self, u):
        return np.zeros(np.shape(u))

    def to_dict(self):
        return {"kind": self.kind, "start": self.start.tolist(), "direction": self.direction.tolist(),
                "length": self.length, "k": self.k, "s0": self.s0, "s1": self.s1}


@dataclass
class ClothoidPiece:
    """Half of a symmetric clothoid blend.

    Forward halves start at ``origin`` heading along ``t_axis`` and bend
    toward ``n_axis``. Reversed halves end at ``origin`` heading along
    ``t_axis``.
    """

    origin: np.ndarray
    t_axis: np.ndarray
    n_axis: np.ndarray
    A: float
    length: float
    reverse: bool
    k: int
    s0: float
    s1: float
    kind: str = "clothoid"

    def _xy(self, w):
        z = np.asarray(w, dtype=float) / (self.A * _SQRT_PI)
        S, C = fresnel(z)
        return self.A * _SQRT_PI * C, self.A * _SQRT_PI * S

    def point(self, u):
        u = np.asarray(u, dtype=float)
        if self.reverse:
            X, Y = self._xy(self.length - u)
            return self.origin - np.multiply.outer(X, self.t_axis) + np.multiply.outer(Y, self.n_axis)
        X, Y = self._xy(u)
        return self.origin + np.multiply.outer(X, self.t_axis) + np.multiply.outer(Y, self.n_axis)

    def tangent(self, u):
        u = np.asarray(u, dtype=float)
        w = self.length - u if self.reverse else u
        tau = w * w / (2.0 * self.A * self.A)
        sgn = -1.0 if self.reverse else 1.0
        return np.multiply.outer(np.cos(tau), self.t_axis) + sgn * np.multiply.outer(np.sin(tau), self.n_axis)

    def curvature(self, u):
        u = np.asarray(u, dtype=float)
        w = self.length - u if self.reverse else u
        return w / (self.A * self.A)

    def to_dict(self):
        return {"kind": self.kind, "origin": self.origin.tolist(), "t_axis": self.t_axis.tolist(),
                "n_axis": self.n_axis.tolist(), "A": self.A, "length": self.length,
                "reverse": self.reverse, "k": self.k, "s0": self.s0, "s1": self.s1}


def _piece_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    for key in ("start", "direction", "origin", "t_axis", "n_axis"):
        if key in d:
            d[key] = np.asarray(d[key], dtype=float)
    if kind in ("line", "extension"):
        return LinePiece(kind=kind, **d)
    return ClothoidPiece(**d)


# --- reference path -------------------------------------------------------------

@dataclass
class ReferencePath:
    via_points: np.ndarray        # (N+2, 3): start, N interior via points, goal
    alphas: np.ndarray            # (N+1,) signed rotation per segment
    omega: np.ndarray
    theta_total: float
    R0: np.ndarray
    Rf: np.ndarray
    sets: list                    # N+1 ConvexPolytope, one per segment
    set_ids: list
    hull_offsets: np.ndarray      # (L, 3) in the end-effector frame
    pieces: list = field(default_factory=list)
    blends: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    extension: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.via_points = np.asarray(self.via_points, dtype=float)
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.R0 = np.asarray(self.R0, dtype=float)
        self.Rf = np.asarray(self.Rf, dtype=float)
        self.hull_offsets = np.asarray(self.hull_offsets, dtype=float).reshape(-1, 3)
        if not self.pieces:
            self.pieces = straight_pieces(self.via_points)
        self._index()

    def _index(self):
        lengths = np.array([p.length for p in self.pieces])
        self._starts = np.concatenate([[-self.extension], -self.extension + np.cumsum(lengths)])[:-1]
        self._ends = self._starts + lengths
        self._cum_alpha = np.concatenate([[0.0], np.cumsum(self.alphas)])

    # -- basic quantities ---------------------------------------------------
    @property
    def n_segments(self):
        return len(self.alphas)

    @property
    def segment_lengths(self):
        return np.linalg.norm(np.diff(self.via_points, axis=0), axis=1)

    @property
    def knots(self):
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def phi_start(self):
        return -self.extension

    @property
    def phi_end(self):
        return float(self._ends[-1]) if len(self._ends) else 0.0

    @property
    def length(self):
        """Arc length from the start pose to the goal (extension excluded)."""
        return self.phi_end

    @property
    def start(self):
        return self.via_points[0]

    @property
    def goal(self):
        return self.via_points[-1]

    @property
    def body_offsets(self):
        """Reference point plus hull offsets, (L+1, 3)."""
        return np.vstack([np.zeros(3), self.hull_offsets])

    # -- evaluation -----------------------------------------------------------
    def _locate(self, phi):
        phi = float(np.clip(phi, self.phi_start, self.phi_end))
        i = int(np.searchsorted(self._starts, phi, side="right") - 1)
        i = min(max(i, 0), len(self.pieces) - 1)
        # skip zero-length pieces so evaluation lands on real geometry
        while self.pieces[i].length == 0 and i + 1 < len(self.pieces) and phi >= self._ends[i]:
            i += 1
        return i, phi - self._starts[i]

    def position(self, phi):
        i, u = self._locate(phi)
        return self.pieces[i].point(u)

    def tangent(self, phi):
        i, u = self._locate(phi)
        p = self.pieces[i]
        if p.length == 0:
            t = self.via_points[-1] - self.via_points[0]
            n = np.linalg.norm(t)
            return t / n if n > 0 else np.array([1.0, 0.0, 0.0])
        return p.tangent(u)

    def segment_param(self, phi):
        """``(k, s)``: segment index and segment-local parameter for orientation."""
        i, u = self._locate(phi)
        p = self.pieces[i]
        frac = u / p.length if p.length > 0 else 1.0
        return p.k, p.s0 + frac * (p.s1 - p.s0)

    def angle_at(self, k, s):
        return float(self._cum_alpha[k] + self.alphas[k] * s)

    def orientation_at(self, k, s):
        return rotation_exp(self.omega, self.angle_at(k, s)) @ self.R0

    def orientation(self, phi):
        return self.orientation_at(*self.segment_param(phi))

    def angle(self, phi):
        """Rotation angle about ``omega`` reached at ``phi``."""
        return self.angle_at(*self.segment_param(phi))

    def angle_range(self, lo, hi):
        """Smallest and largest rotation angle over ``phi`` in ``[lo, hi]``.

        The angle is piecewise linear in ``phi``, so piece boundaries and the
        interval ends are the only candidates.
        """
        inner = self._starts[(self._starts > lo) & (self._starts < hi)]
        vals = [self.angle(lo), self.angle(hi)] + [self.angle(x) for x in inner]
        return min(vals), max(vals)

    def segment_start(self, k):
        """First ``phi`` carried by segment ``k`` (``phi_end`` past the last one)."""
        for start, p in zip(self._starts, self.pieces):
            if p.k >= k and p.kind != "extension":
                return float(start)
        return self.phi_end

    def set_index(self, phi):
        i, _ = self._locate(phi)
        return self.pieces[i].k

    def piece_at(self, phi):
        return self.pieces[self._locate(phi)[0]]

    def body_points_at(self, k, s, position):
        """Reference point and hull points for segment parameter ``(k, s)``."""
        theta = self.angle_at(k, s)
        v = self.body_offsets @ self.R0.T
        return position + rotate_about(self.omega, theta, v)

    def hull_points(self, phi):
        k, s = self.segment_param(phi)
        return self.body_points_at(k, s, self.position(phi))

    def project(self, x, phi_hint=None, window=None):
        """Arc-length parameter of the closest path point to ``x``.

        Searches every piece (or those overlapping ``[phi_hint - window,
        phi_hint + window]``) in closed form for lines and by a dense scan plus
        refinement on clothoid halves.
        """
        x = np.asarray(x, dtype=float)
        best = (np.inf, self.phi_start)
        for i, p in enumerate(self.pieces):
            a, b = self._starts[i], self._ends[i]
            if window is not None and phi_hint is not None and (b < phi_hint - window or a > phi_hint + window):
                continue
            if p.length == 0:
                u = 0.0
            elif isinstance(p, LinePiece):
                u = float(np.clip((x - p.start) @ p.direction, 0.0, p.length))
            else:
                lo, hi = 0.0, p.length
                # nested grid search: each round keeps the two cells around the best sample
                while hi - lo > 1e-11 * max(1.0, p.length):
                    us = np.linspace(lo, hi, 17)
                    d = np.linalg.norm(p.point(us) - x, axis=1)
                    j = int(np.argmin(d))
                    lo, hi = us[max(j - 1, 0)], us[min(j + 1, 16)]
                u = 0.5 * (lo + hi)
            d = float(np.linalg.norm(p.point(u) - x))
            if d < best[0] - 1e-15:
                best = (d, a + u)
        return best[1]

    def sample_phis(self, n):
        return np.linspace(0.0, self.phi_end, n)

    # -- orientation metrics ---------------------------------------------------
    @property
    def orientation_length_deg(self):
        return float(np.sum(np.abs(self.alphas)) * 180.0 / np.pi)

    # -- serialization ---------------------------------------------------------
    def to_dict(self):
        return {
            "via_points": self.via_points.tolist(),
            "knots": self.knots.tolist(),
            "alphas": self.alphas.tolist(),
            "omega_ref": self.omega.tolist(),
            "theta_total": self.theta_total,
            "R0": self.R0.tolist(),
            "Rf": self.Rf.tolist(),
            "set_ids": list(self.set_ids),
            "sets": [p.to_dict() for p in self.sets],
            "hull_offsets": self.hull_offsets.tolist(),
            "pieces": [p.to_dict() for p in self.pieces],
            "blends": self.blends,
            "flags": list(self.flags),
            "extension": self.extension,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            via_points=d["via_points"], alphas=d["alphas"], omega=d["omega_ref"],
            theta_total=d["theta_total"], R0=d["R0"], Rf=d["Rf"],
            sets=[ConvexPolytope.from_dict(s) for s in d["sets"]], set_ids=list(d["set_ids"]),
            hull_offsets=d["hull_offsets"], pieces=[_piece_from_dict(p) for p in d["pieces"]],
            blends=d.get("blends", []), flags=d.get("flags", []), extension=d.get("extension", 0.0),
        )

    def replace(self, **kw):
        fields = dict(via_points=self.via_points, alphas=self.alphas, omega=self.omega,
                      theta_total=self.theta_total, R0=self.R0, Rf=self.Rf, sets=self.sets,
                      set_ids=self.set_ids, hull_offsets=self.hull_offsets, pieces=self.pieces,
                      blends=self.blends, flags=list(self.flags), extension=self.extension,
                      stats=dict(self.stats))
        fields.update(kw)
        return ReferencePath(**fields)


def straight_pieces(via_points):
    pieces = []
    for k in range(len(via_points) - 1):
        d = via_points[k + 1] - via_points[k]
        n = float(np.linalg.norm(d))
        u = d / n if n > 0 else np.zeros(3)
        pieces.append(LinePiece(via_points[k].copy(), u, n, k, 0.0, 1.0))
    return pieces


# --- worst-case parameter on a segment ----------------------------------------

def phi_min(i, l, halfspace, path: ReferencePath):
    """Arc-length parameter on segment ``i`` minimizing ``a^T p_l - b``.

    ``l`` indexes :attr:`ReferencePath.body_offsets` (0 is the reference
    point). Containment checks need the largest value instead, which is this
    function applied to the reversed half-space ``(-a, -b)``.
    """
    a = np.asarray(halfspace[0], dtype=float)
    s = segment_worst_s(path, i, path.body_offsets[l], a, maximize=False)
    return float(path.knots[i] + s * path.segment_lengths[i])


def segment_worst_s(path: ReferencePath, k, offset, a, maximize=True):
    q0, q1 = path.via_points[k], path.via_points[k + 1]
    v = path.R0 @ offset
    s, _ = segment_extremum(q0, q1, path.angle_at(k, 0.0), path.alphas[k], path.omega, v, a, maximize)
    return s


def max_violation(path: ReferencePath):
    """Largest exact ``a^T x - b`` over segments, body points and assigned-set rows.

    Only valid for unsmoothed paths (straight segments).
    """
    worst = -np.inf
    for k in range(path.n_segments):
        poly = path.sets[k]
        q0, q1 = path.via_points[k], path.via_points[k + 1]
        th0 = path.angle_at(k, 0.0)
        for off in path.body_offsets:
            v = path.R0 @ off
            for a, b in zip(poly.A, poly.b):
                _, val = segment_extremum(q0, q1, th0, path.alphas[k], path.omega, v, a, maximize=True)
                worst = max(worst, val - b)
    return worst


# --- corner smoothing -------------------------------------------------------

def _clothoid_unit(delta):
    """End point (X, Y) of a half-blend of unit length turning by ``delta / 2``."""
    A = 1.0 / np.sqrt(delta)
    z = 1.0 / (A * _SQRT_PI)
    S, C = fresnel(z)
    return A * _SQRT_PI * C, A * _SQRT_PI * S


def _range_max(path, k, s_lo, s_hi, v, a):
    """Max of ``a^T Exp(omega theta) v`` for orientations on segment k, ``s`` in [s_lo, s_hi]."""
    c0, P, Q = hull_term_coeffs(a, v, path.omega)
    th0 = path.angle_at(k, s_lo)
    dal = path.alphas[k] * (s_hi - s_lo)
    _, val = trig_extremum(0.0, P, Q, th0, dal, maximize=True)
    return val + c0


def _half_contained(path, k, s_lo, s_hi, tri, tol=0.0):
    """Conservative containment test for a blend half.

    The half-curve lies in the triangle ``tri`` (it is convex and tangent to
    both bounding lines), so position and orientation extremes can be bounded
    separately.
    """
    poly = path.sets[k]
    tri = np.asarray(tri)
    for a, b in zip(poly.A, poly.b):
        pos = float(np.max(tri @ a))
        for off in path.body_offsets:
            v = path.R0 @ off
            if pos + _range_max(path, k, s_lo, s_hi, v, a) - b > tol:
                return False
    return True


def smooth_corners(path: ReferencePath, factor=0.25, n_check=50, min_extent=1e-4):
    """Replace interior corners by symmetric clothoid pairs where containment allows."""
    q = path.via_points
    lengths = path.segment_lengths
    n_seg = path.n_segments
    # corner c sits at via point q[c], between segments c-1 and c
    extents = np.zeros(n_seg + 1)
    geo = {}
    for c in range(1, n_seg):
        l_in, l_out = lengths[c - 1], lengths[c]
        if l_in <= 0 or l_out <= 0:
            continue
        u1 = (q[c] - q[c - 1]) / l_in
        u2 = (q[c + 1] - q[c]) / l_out
        cosd = float(np.clip(u1 @ u2, -1.0, 1.0))
        delta = float(np.arccos(cosd))
        if delta < 1e-6 or np.pi - delta < 1e-6:
            continue
        e2 = u2 - cosd * u1
        e2 /= np.linalg.norm(e2)
        n2 = -u1 + cosd * u2
        n2 /= np.linalg.norm(n2)
        xh, yh = _clothoid_unit(delta)
        t_per_len = xh + yh * np.tan(0.5 * delta)
        geo[c] = (u1, u2, e2, n2, delta, t_per_len)
    # blends at neighbouring corners may not overlap
    for c in sorted(geo):
        limit = factor * min(lengths[c - 1], lengths[c])
        T = limit
        u1, u2, e2, n2, delta, t_per_len = geo[c]
        while T >= min_extent * max(1.0, limit):
            Ls = T / t_per_len
            A = Ls / np.sqrt(delta)
            p_in = q[c] - T * u1
            p_out = q[c] + T * u2
            first = ClothoidPiece(p_in, u1, e2, A, Ls, False, c - 1, 1.0 - T / lengths[c - 1], 1.0)
            second = ClothoidPiece(p_out, u2, n2, A, Ls, True, c, 0.0, T / lengths[c])
            M = first.point(Ls)
            ok = (path.sets[c - 1].contains(M, tol=0.0) and path.sets[c].contains(M, tol=0.0)
                  and _half_contained(path, c - 1, first.s0, 1.0, [p_in, q[c], M])
                  and _half_contained(path, c, 0.0, second.s1, [M, q[c], p_out]))
            if ok:
                us = np.linspace(0.0, Ls, n_check)
                ok = (_samples_inside(path, first, us) and _samples_inside(path, second, us))
            if ok:
                extents[c] = T
                geo[c] = geo[c] + ((first, second),)
                break
            T *= 0.5
    pieces = []
    blends = []
    for k in range(n_seg):
        T0 = extents[k]
        T1 = extents[k + 1] if k + 1 < n_seg else 0.0
        L = lengths[k]
        if T0 > 0:
            pieces.append(geo[k][6][1])
        if L == 0:
            pieces.append(LinePiece(q[k].copy(), np.zeros(3), 0.0, k, 0.0, 1.0))
        else:
            d = (q[k + 1] - q[k]) / L
            pieces.append(LinePiece(q[k] + T0 * d, d, L - T0 - T1, k, T0 / L, 1.0 - T1 / L))
        if T1 > 0:
            pieces.append(geo[k + 1][6][0])
            blends.append({"corner": k + 1, "extent": float(T1), "half_length": float(geo[k + 1][6][0].length),
                           "deflection": float(geo[k + 1][4])})
    return path.replace(pieces=pieces, blends=blends)


def _samples_inside(path, piece, us):
    pts = piece.point(us)
    frac = us / piece.length
    for x, f in zip(pts, frac):
        s = piece.s0 + f * (piece.s1 - piece.s0)
        body = path.body_points_at(piece.k, s, x)
        if not np.all(path.sets[piece.k].contains(body, tol=0.0)):
            return False
    return True


def add_backward_extension(path: ReferencePath, direction, length):
    """Prepend a straight piece ending at the start and pointing along ``direction``."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if length <= 0 or n == 0:
        return path
    d = d / n
    ext = LinePiece(path.start - length * d, d, float(length), 0, 0.0, 0.0, kind="extension")
    return path.replace(pieces=[ext] + list(path.pieces), extension=float(length))
