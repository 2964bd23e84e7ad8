"""Via-point and rotation-split optimization along a fixed set sequence.

Decision variables are the interior via points ``q_1 .. q_N`` and the
per-segment rotation angles ``alpha_0 .. alpha_N``. The objective is the
size-weighted sum of squared segment lengths plus a smoothness penalty on
consecutive angles. Hull containment is semi-infinite in the segment
parameter; it is enforced at the knots and at the exact worst-case
parameter of every (segment, body point, row) triple, re-anchored between
solves until the path is feasible everywhere.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import PathInfeasible
from .geometry import ConvexPolytope, cross, geodesic, rotate_about
from .path import ReferencePath, hull_term_coeffs, trig_extremum_batch
from .qp import solve_qp

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9     # accepted violation of any constraint
TIGHTEN = 1e-8      # constraint back-off handed to the solvers
MOVE_TOL = 1e-5     # via-point displacement for convergence
MAX_OUTER = 20


class _Problem:
    """Flattened constraint data for one set sequence."""

    def __init__(self, sets, p0, pf, R0, offsets, omega, theta, costs, w_alpha):
        self.sets = sets
        self.n_seg = len(sets)
        self.N = self.n_seg - 1
        self.p0 = np.asarray(p0, float)
        self.pf = np.asarray(pf, float)
        self.omega = omega
        self.theta = theta
        self.costs = np.asarray(costs, float)
        self.w_alpha = w_alpha
        body = np.vstack([np.zeros(3), np.asarray(offsets, float).reshape(-1, 3)])
        self.V = body @ np.asarray(R0, float).T     # world offsets at zero rotation
        self.nL = len(self.V)
        seg, rows_a, rows_b = [], [], []
        for k, poly in enumerate(sets):
            seg.append(np.full(poly.n_rows, k))
            rows_a.append(poly.A)
            rows_b.append(poly.b)
        self.row_seg = np.concatenate(seg)
        self.row_a = np.vstack(rows_a)
        self.row_b = np.concatenate(rows_b)
        # every (row, body point) pair; the segment is implied by the row
        R, L = np.meshgrid(np.arange(len(self.row_b)), np.arange(self.nL), indexing="ij")
        self.pair_r = R.ravel()
        self.pair_l = L.ravel()
        # trig coefficients for each pair: const + P cos + Q sin
        coeffs = np.array([hull_term_coeffs(self.row_a[r], self.V[l], omega)
                           for r, l in zip(self.pair_r, self.pair_l)])
        self.pair_c0, self.pair_P, self.pair_Q = coeffs.T if len(coeffs) else (np.zeros(0),) * 3

    # -- helpers ---------------------------------------------------------
    def points(self, qf):
        return np.vstack([self.p0, qf.reshape(-1, 3), self.pf])

    def cum(self, alphas):
        return np.concatenate([[0.0], np.cumsum(alphas)])

    def objective(self, q, alphas):
        d = np.diff(q, axis=0)
        f = float(np.sum(self.costs * np.einsum("ij,ij->i", d, d)))
        if self.N > 0:
            f += self.w_alpha * float(np.sum(self.costs[:-1] * np.diff(alphas) ** 2))
        return f

    def worst(self, q, alphas):
        """Worst-case ``s`` and violation for every (row, body point) pair."""
        k = self.row_seg[self.pair_r]
        a = self.row_a[self.pair_r]
        c1 = np.einsum("ij,ij->i", a, q[k + 1] - q[k])
        th0 = self.cum(alphas)[k]
        s, val = trig_extremum_batch(c1, self.pair_P, self.pair_Q, th0, alphas[k], maximize=True)
        viol = val + np.einsum("ij,ij->i", a, q[k]) + self.pair_c0 - self.row_b[self.pair_r]
        return s, viol

    def constraint_terms(self, anchors, q, alphas):
        """Values of ``a^T x - b`` at anchors ``(pair index, s)`` and pieces for Jacobians."""
        pidx, s = anchors
        r = self.pair_r[pidx]
        l = self.pair_l[pidx]
        k = self.row_seg[r]
        a = self.row_a[r]
        theta = self.cum(alphas)[k] + alphas[k] * s
        rot = _rotate_rows(self.omega, theta, self.V[l])
        x = (1 - s)[:, None] * q[k] + s[:, None] * q[k + 1] + rot
        g = np.einsum("ij,ij->i", a, x) - self.row_b[r]
        return g, r, l, k, a, theta, rot


def _rotate_rows(omega, theta, v):
    c, sn = np.cos(theta), np.sin(theta)
    along = (v @ omega)[:, None] * omega
    return along + c[:, None] * (v - along) + sn[:, None] * cross(omega, v)


def _knot_anchors(prob):
    n = len(prob.pair_r)
    idx = np.arange(n)
    return np.concatenate([idx, idx]), np.concatenate([np.zeros(n), np.ones(n)])


def _merge_anchors(anchors, pidx, s):
    P = np.concatenate([anchors[0], pidx])
    S = np.concatenate([anchors[1], s])
    key = np.round(S, 12) + 2.0 * P
    _, keep = np.unique(key, return_index=True)
    keep.sort()
    return P[keep], S[keep]


def _worst_anchors(prob, q, alphas, threshold):
    s, viol = prob.worst(q, alphas)
    sel = np.nonzero((viol > threshold) & (s > 0) & (s < 1))[0]
    return sel, s[sel], float(np.max(viol)) if len(viol) else -np.inf


# --- position-only problem --------------------------------------------------------

def _position_qp(prob, alphas, anchors):
    """Convex QP in the interior via points for fixed angles."""
    N = prob.N
    n = 3 * N
    Lap = np.zeros((N + 2, N + 2))
    for k in range(N + 1):
        c = prob.costs[k]
        Lap[k, k] += c
        Lap[k + 1, k + 1] += c
        Lap[k, k + 1] -= c
        Lap[k + 1, k] -= c
    H = 2.0 * np.kron(Lap[1:-1, 1:-1], np.eye(3))
    fixed = np.concatenate([prob.p0, prob.pf])
    Hfc = 2.0 * np.kron(Lap[1:-1][:, [0, N + 1]], np.eye(3))
    lin = Hfc @ fixed
    q_dummy = prob.points(np.zeros(n))
    g, r, l, k, a, theta, rot = prob.constraint_terms(anchors, q_dummy, alphas)
    s = anchors[1]
    m = len(s)
    G = np.zeros((m, N + 2, 3))
    G[np.arange(m), k] += (1 - s)[:, None] * a
    G[np.arange(m), k + 1] += s[:, None] * a
    # g evaluated with free points at zero already contains fixed-point terms
    h = -g - TIGHTEN
    return solve_qp(H, lin, G[:, 1:-1, :].reshape(m, n), h)


def _diagnose_pair(prob, alphas, set_ids):
    """Name the first intersection where the body cannot sit at its knot orientation."""
    cum = prob.cum(alphas)
    for j in range(1, prob.N + 1):
        rows_a, rows_b = [], []
        for k in (j - 1, j):
            poly = prob.sets[k]
            for v in prob.V:
                off = rotate_about(prob.omega, cum[j], v)
                rows_a.append(poly.A)
                rows_b.append(poly.b - poly.A @ off)
        res = linprog(np.zeros(3), A_ub=np.vstack(rows_a), b_ub=np.concatenate(rows_b),
                      bounds=[(None, None)] * 3, method="highs")
        if res.status == 2:
            return (set_ids[j - 1], set_ids[j])
    return None


def _solve_position(prob, alphas, set_ids, max_rounds=40):
    anchors = _knot_anchors(prob)
    for _ in range(max_rounds):
        if prob.N == 0:
            q = prob.points(np.zeros(0))
        else:
            res = _position_qp(prob, alphas, anchors)
            if res.infeasible or not res.ok:
                pair = _diagnose_pair(prob, alphas, set_ids)
                if pair is None:
                    pair = (set_ids[0], set_ids[-1])
                raise PathInfeasible(pair)
            q = prob.points(res.x)
        sel, s_new, worst = _worst_anchors(prob, q, alphas, -1e-6)
        if worst <= FEAS_TOL:
            return q
        if prob.N == 0:
            raise PathInfeasible((set_ids[0], set_ids[0]),
                                 "end-effector cannot move straight through the start set")
        anchors = _merge_anchors(anchors, sel, s_new)
    raise PathInfeasible((set_ids[0], set_ids[-1]), "containment did not converge")


# --- joint problem ------------------------------------------------------------------

def _joint_step(prob, q_prev, a_prev, anchors):
    N = prob.N
    n_q = 3 * N
    n_a = N + 1

    def split(z):
        return prob.points(z[:n_q]), z[n_q:]

    def fun(z):
        q, al = split(z)
        return prob.objective(q, al)

    def jac(z):
        q, al = split(z)
        d = np.diff(q, axis=0) * (2.0 * prob.costs)[:, None]
        gq = d[:-1] - d[1:]
        ga = np.zeros(n_a)
        if N > 0:
            da = 2.0 * prob.w_alpha * prob.costs[:-1] * np.diff(al)
            ga[:-1] -= da
            ga[1:] += da
        return np.concatenate([gq.ravel(), ga])

    def cons(z):
        q, al = split(z)
        g = prob.constraint_terms(anchors, q, al)[0]
        return -g - TIGHTEN

    def cons_jac(z):
        q, al = split(z)
        g, r, l, k, a, theta, rot = prob.constraint_terms(anchors, q, al)
        s = anchors[1]
        m = len(s)
        Jq = np.zeros((m, N + 2, 3))
        Jq[np.arange(m), k] += (1 - s)[:, None] * a
        Jq[np.arange(m), k + 1] += s[:, None] * a
        # d/dtheta of a^T Exp(omega theta) v = a^T (omega x rot)
        dth = np.einsum("ij,ij->i", a, cross(prob.omega, rot))
        Ja = np.zeros((m, n_a))
        below = np.arange(n_a)[None, :] < k[:, None]
        Ja[below] = 1.0
        Ja[np.arange(m), k] = s
        Ja *= dth[:, None]
        return -np.hstack([Jq[:, 1:-1, :].reshape(m, n_q), Ja])

    z0 = np.concatenate([q_prev[1:-1].ravel(), a_prev])
    constraints = [
        {"type": "ineq", "fun": cons, "jac": cons_jac},
        {"type": "eq", "fun": lambda z: np.array([np.sum(z[n_q:]) - prob.theta]),
         "jac": lambda z: np.concatenate([np.zeros(n_q), np.ones(n_a)])[None, :]},
    ]
    bounds = [(None, None)] * n_q + [(-2 * np.pi, 2 * np.pi)] * n_a
    res = minimize(fun, z0, jac=jac, constraints=constraints, bounds=bounds, method="SLSQP",
                   options={"maxiter": 200, "ftol": 1e-12})
    q, al = split(res.x)
    return q, np.array(al)


def _solve_joint(prob, q, alphas, flags):
    f_prev = prob.objective(q, alphas)
    history = [f_prev]
    for _ in range(MAX_OUTER):
        sel, s_sel, _ = _worst_anchors(prob, q, alphas, -np.inf)
        anchors = _merge_anchors(_knot_anchors(prob), sel, s_sel)
        accepted = None
        for _inner in range(10):
            q_new, a_new = _joint_step(prob, q, alphas, anchors)
            extra, s_extra, worst = _worst_anchors(prob, q_new, a_new, -1e-7)
            if worst <= FEAS_TOL and abs(np.sum(a_new) - prob.theta) <= 1e-9:
                accepted = (q_new, a_new)
                break
            if len(extra) == 0:
                break
            anchors = _merge_anchors(anchors, extra, s_extra)
        if accepted is None:
            flags.append("MaxIterReached")
            break
        q_new, a_new = accepted
        # restore the angle sum exactly
        a_new = a_new + (prob.theta - np.sum(a_new)) / len(a_new)
        f_new = prob.objective(q_new, a_new)
        if f_new > f_prev + 1e-9:
            # the solver wandered off; keep the last accepted iterate
            break
        move = float(np.max(np.abs(q_new - q))) if len(q) else 0.0
        q, alphas, f_prev = q_new, a_new, f_new
        history.append(f_new)
        if move < MOVE_TOL:
            break
    else:
        flags.append("MaxIterReached")
    return q, alphas, history


def optimize_path(sets, p0, R0, pf, Rf, hull_offsets=(), w_alpha=1.0, size_costs=None,
                  set_ids=None, init_points=None, position_only=False) -> ReferencePath:
    """Optimize via points and rotation split for the set sequence ``sets``.

    ``init_points`` (N interior points) seeds the angle split; defaults to
    Chebyshev centers of consecutive intersections. Raises
    :class:`PathInfeasible` when the body cannot pass.
    """
    sets = list(sets)
    n_seg = len(sets)
    N = n_seg - 1
    set_ids = list(set_ids) if set_ids is not None else list(range(n_seg))
    costs = np.ones(n_seg) if size_costs is None else np.asarray(size_costs, float)
    geo = geodesic(R0, Rf)
    prob = _Problem(sets, p0, pf, R0, hull_offsets, geo.omega, geo.theta, costs, w_alpha)
    if init_points is None:
        init_points = [sets[j - 1].intersect(sets[j]).chebyshev()[0] for j in range(1, N + 1)]
    q_init = prob.points(np.asarray(init_points, float).reshape(-1))
    lengths = np.linalg.norm(np.diff(q_init, axis=0), axis=1)
    if lengths.sum() > 0:
        alphas = geo.theta * lengths / lengths.sum()
    else:
        alphas = np.full(n_seg, geo.theta / n_seg)
    flags = []
    q = _solve_position(prob, alphas, set_ids)
    history = [prob.objective(q, alphas)]
    if position_only:
        flags.append("PositionOnly")
    elif N > 0 and geo.theta > 0:
        q, alphas, history = _solve_joint(prob, q, alphas, flags)
    path = ReferencePath(via_points=q, alphas=alphas, omega=geo.omega, theta_total=geo.theta,
                         R0=R0, Rf=Rf, sets=sets, set_ids=set_ids, hull_offsets=hull_offsets,
                         flags=flags)
    if geo.flag:
        path.flags.append(geo.flag)
    path.stats["objective_history"] = history
    return path
