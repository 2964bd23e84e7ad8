"""Receding-horizon tunnel follower for a double-integrator end effector.

Each control step solves a sparse convex QP over ``M`` horizon positions:
progress along the reference path is rewarded, deviation from it is
penalized, and every horizon position keeps the rigid hull inside the path
set it is assigned to. The assignment switches from set ``i`` to set ``i+1``
at the split index (first horizon step that is past the transition and
inside both sets). Extra collision points carried by the end effector are
kept inside per-point sets built around the segment between their current
and predicted positions, which keeps the decision-variable constraint count
independent of how many obstacles there are.

Orientation is not optimized: it follows the path orientation at the
tracked path parameter. For the step that is actually executed, set rows
are tightened by the worst case over the orientations its projection can
reach, so the hull stays inside whichever one it lands on. Later steps use
the orientation predicted by the previous solve.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BoundPlanError, HullInCollision, PredictedCollision, TunnelViolation
from .geometry import ConvexBody, ConvexPolytope, closest_points, cross, rotate_about, segment_closest_points
from .inflation import Workspace, set_convex_hull
from .path import ReferencePath, add_backward_extension, hull_term_coeffs, trig_extremum_batch
from .planner import PlanRequest, plan
from .qp import solve_qp

log = logging.getLogger(__name__)

MEMBER_TOL = 1e-9


@dataclass(frozen=True)
class TrackerConfig:
    horizon_steps: int = 20
    dt: float = 0.05
    v_max: float = 0.5
    a_max: float = 2.0
    eps_phi: float = 0.02
    progress_weight: float = 1.0
    deviation_weight: float = 100.0
    accel_weight: float = 1e-3
    tighten: float = 1e-7      # extra row margin against solver round-off

    def __post_init__(self):
        if self.horizon_steps < 2:
            raise ValueError("horizon_steps must be at least 2")
        if not self.dt > 0 or not self.v_max > 0 or not self.a_max > 0:
            raise ValueError("dt, v_max and a_max must be positive")
        if self.eps_phi < 0:
            raise ValueError("eps_phi must be non-negative")
        if self.progress_weight < 0 or not self.deviation_weight > 0 or not self.accel_weight > 0:
            raise ValueError("deviation and acceleration weights must be positive")
        # the horizon ends at rest, which needs enough braking authority
        if self.v_max > self.a_max * (self.horizon_steps - 1) * self.dt + 1e-12:
            raise ValueError("v_max cannot be stopped within the horizon at a_max")

    @property
    def trust(self):
        """Half-width of the path-parameter trust region around each predicted step."""
        return 2.0 * np.sqrt(3.0) * self.v_max * self.dt


@dataclass(frozen=True)
class CollisionPoint:
    offset: tuple
    margin: float = 0.0

    def __post_init__(self):
        o = np.asarray(self.offset, dtype=float).reshape(3)
        if self.margin < 0:
            raise ValueError("collision margin must be non-negative")
        object.__setattr__(self, "offset", tuple(o.tolist()))


@dataclass
class TrackerState:
    position: np.ndarray
    velocity: np.ndarray
    phi: float
    horizon: np.ndarray                 # (M, 3), row 0 is the current position
    horizon_phi: np.ndarray             # (M,)
    active_segment: int = 0
    collision_points: list = field(default_factory=list)
    collision_sets: list = field(default_factory=list)
    time: float = 0.0
    step: int = 0
    accel_plan: np.ndarray | None = None
    last_status: str = "init"
    last_split: int | None = None

    def copy(self):
        return dataclasses.replace(
            self, position=self.position.copy(), velocity=self.velocity.copy(),
            horizon=self.horizon.copy(), horizon_phi=self.horizon_phi.copy(),
            collision_points=list(self.collision_points), collision_sets=list(self.collision_sets),
            accel_plan=None if self.accel_plan is None else self.accel_plan.copy())


def initial_state(path: ReferencePath, cfg: TrackerConfig, collision_points=(), position=None,
                  velocity=None) -> TrackerState:
    p = path.start.copy() if position is None else np.asarray(position, dtype=float).copy()
    v = np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float).copy()
    phi = 0.0 if position is None else float(path.project(p))
    M = cfg.horizon_steps
    return TrackerState(p, v, phi, np.tile(p, (M, 1)), np.full(M, phi),
                        active_segment=path.set_index(phi), collision_points=list(collision_points))


# --- horizon splitting --------------------------------------------------------

def split_index(state: TrackerState, path: ReferencePath, i: int, eps_phi: float = 0.02) -> int:
    """1-based first horizon step past the ``i -> i+1`` transition and inside both sets.

    Returns ``M + 1`` when no step qualifies (no split this cycle).
    """
    M = len(state.horizon)
    if i + 1 >= path.n_segments:
        return M + 1
    phi_i = path.segment_start(i + 1)
    S_a, S_b = path.sets[i], path.sets[i + 1]
    for m in range(M):
        x = state.horizon[m]
        if state.horizon_phi[m] > phi_i - eps_phi and S_a.contains(x, MEMBER_TOL) and S_b.contains(x, MEMBER_TOL):
            return m + 1
    return M + 1


# --- per-point collision sets ---------------------------------------------------

def _segment_closest(body: ConvexBody, obs: ConvexBody):
    V = body.vertices
    return segment_closest_points(V[0], V[-1], obs)


def collision_set_for_point(p_now, p_hend, ws: Workspace, margin: float = 0.0) -> ConvexPolytope:
    """Obstacle-free set around the segment ``[p_now, p_hend]``."""
    pts = np.array([p_now, p_hend], dtype=float)
    try:
        return set_convex_hull(pts, ws, margin, closest=_segment_closest)
    except HullInCollision as ex:
        raise PredictedCollision(f"segment of a collision point meets obstacle {ex.obstacle_index}",
                                 obstacle_index=ex.obstacle_index, distance=ex.details.get("distance")) from None


def _rotated(path: ReferencePath, theta, offset):
    return rotate_about(path.omega, theta, path.R0 @ np.asarray(offset, float))


def update_collision_sets(state: TrackerState, path: ReferencePath, ws: Workspace):
    """Sets around each collision point's current and previous-horizon-end position."""
    out = []
    th_now = path.angle(state.phi)
    th_end = path.angle(state.horizon_phi[-1])
    for cp in state.collision_points:
        p_now = state.position + _rotated(path, th_now, cp.offset)
        p_hend = state.horizon[-1] + _rotated(path, th_end, cp.offset)
        out.append(collision_set_for_point(p_now, p_hend, ws, cp.margin))
    return out


# --- robust row tightening ------------------------------------------------------

def _worst_offsets(A, offsets_w, omega, th_lo, th_hi):
    """max over offsets and angles in ``[th_lo, th_hi]`` of ``a^T Exp(omega th) v`` per row and step.

    ``A`` is (r, 3), ``offsets_w`` (L, 3) already rotated by ``R0``, angle
    bounds are (K,). Returns (K, r).
    """
    r, L, K = len(A), len(offsets_w), len(th_lo)
    V = np.asarray(offsets_w, float)
    along = V @ omega
    c0 = np.outer(A @ omega, along)
    P = A @ (V - along[:, None] * omega).T
    Q = A @ cross(omega, V).T
    shape = (K, r, L)
    th0 = np.broadcast_to(np.asarray(th_lo, float)[:, None, None], shape).ravel()
    alpha = np.broadcast_to((np.asarray(th_hi, float) - np.asarray(th_lo, float))[:, None, None], shape).ravel()
    Pb = np.broadcast_to(P, shape).ravel()
    Qb = np.broadcast_to(Q, shape).ravel()
    _, val = trig_extremum_batch(np.zeros_like(Pb), Pb, Qb, th0, alpha, maximize=True)
    val = val.reshape(shape) + c0[None]
    return val.max(axis=2)


# --- the horizon program ----------------------------------------------------------

class _Layout:
    def __init__(self, M):
        self.M = M
        self.p = 0
        self.v = 3 * M
        self.a = 6 * M
        self.f = 6 * M + 3 * (M - 1)
        self.n = self.f + M

    def P(self, m):
        return self.p + 3 * m

    def V(self, m):
        return self.v + 3 * m

    def A(self, m):
        return self.a + 3 * m

    def F(self, m):
        return self.f + m


@dataclass
class _Rows:
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: list = field(default_factory=list)

    def add(self, coeffs, rhs):
        r = len(self.rhs)
        for c, v in coeffs:
            self.rows.append(r)
            self.cols.append(c)
            self.vals.append(v)
        self.rhs.append(rhs)

    def add_block(self, A, col, rhs):
        """Rows ``A x[col:col+3] <= rhs`` for a dense (k, 3) block."""
        k = len(rhs)
        r0 = len(self.rhs)
        rr = np.repeat(np.arange(r0, r0 + k), 3)
        cc = np.tile(np.arange(col, col + 3), k)
        self.rows.extend(rr.tolist())
        self.cols.extend(cc.tolist())
        self.vals.extend(np.asarray(A, float).ravel().tolist())
        self.rhs.extend(np.asarray(rhs, float).tolist())

    def matrix(self, n):
        return sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n)), np.array(self.rhs)


@dataclass
class _Problem:
    """Everything that defines one horizon program apart from the set assignment."""

    lay: _Layout
    windows: np.ndarray        # (M, 2) parameter window per step
    th_range: np.ndarray       # (M, 2) angle range per step
    phi_hat: np.ndarray
    pi_hat: np.ndarray
    t_hat: np.ndarray


def _windows(state: TrackerState, path: ReferencePath, cfg: TrackerConfig):
    M = cfg.horizon_steps
    d = cfg.trust
    phi_hat = np.clip(state.horizon_phi, state.phi, path.phi_end)
    lo = np.maximum(state.phi, phi_hat - d)
    hi = np.minimum(path.phi_end, phi_hat + d)
    hi = np.maximum(hi, lo)
    lo[0] = hi[0] = state.phi
    # the next position is fixed up to half a step of acceleration, so its
    # projection (and with it the next orientation) lies in a narrow window
    drift = state.position + cfg.dt * state.velocity
    spread = 1.5 * np.sqrt(3.0) * 0.5 * cfg.dt ** 2 * cfg.a_max + 1e-9
    c = path.project(drift, phi_hint=state.phi, window=d + spread)
    lo[1] = min(max(state.phi, c - spread), path.phi_end)
    hi[1] = max(min(path.phi_end, c + spread), lo[1])
    phi_hat[1] = np.clip(phi_hat[1], lo[1], hi[1])
    th = np.empty((M, 2))
    th[1] = path.angle_range(lo[1], hi[1])
    for m in range(2, M):
        th[m] = path.angle(phi_hat[m])
    th[0] = path.angle(state.phi)
    pi_hat = np.array([path.position(f) for f in phi_hat])
    t_hat = np.array([path.tangent(f) for f in phi_hat])
    return _Problem(_Layout(M), np.column_stack([lo, hi]), th, phi_hat, pi_hat, t_hat)


def _build(state, path, cfg, prob: _Problem, assign, coll_sets, coll_offsets, terminal, brake=False):
    """Assemble the QP. ``assign[m]`` is the path-set index for step ``m`` (m >= 1)."""
    lay = prob.lay
    M, n, dt = lay.M, lay.n, cfg.dt
    eq = _Rows()
    for k in range(3):
        eq.add([(lay.P(0) + k, 1.0)], state.position[k])
        eq.add([(lay.V(0) + k, 1.0)], state.velocity[k])
    eq.add([(lay.F(0), 1.0)], state.phi)
    for m in range(M - 1):
        for k in range(3):
            eq.add([(lay.P(m + 1) + k, 1.0), (lay.P(m) + k, -1.0), (lay.V(m) + k, -dt),
                    (lay.A(m) + k, -0.5 * dt * dt)], 0.0)
            eq.add([(lay.V(m + 1) + k, 1.0), (lay.V(m) + k, -1.0), (lay.A(m) + k, -dt)], 0.0)
    for k in range(3):
        eq.add([(lay.V(M - 1) + k, 1.0)], 0.0)

    ineq = _Rows()
    for m in range(1, M):
        for k in range(3):
            ineq.add([(lay.V(m) + k, 1.0)], cfg.v_max)
            ineq.add([(lay.V(m) + k, -1.0)], cfg.v_max)
    for m in range(M - 1):
        for k in range(3):
            ineq.add([(lay.A(m) + k, 1.0)], cfg.a_max)
            ineq.add([(lay.A(m) + k, -1.0)], cfg.a_max)
    for m in range(1, M):
        ineq.add([(lay.F(m), 1.0)], prob.windows[m, 1])
        ineq.add([(lay.F(m), -1.0)], -prob.windows[m, 0])
        ineq.add([(lay.F(m - 1), 1.0), (lay.F(m), -1.0)], 0.0)

    # path-set rows, tightened by the worst hull point over the angle window
    offs = path.body_offsets @ path.R0.T
    th_lo, th_hi = prob.th_range[1:, 0], prob.th_range[1:, 1]
    cache = {}
    for m in range(1, M):
        sid = assign[m]
        if sid not in cache:
            S = path.sets[sid]
            cache[sid] = (S, _worst_offsets(S.A, offs, path.omega, th_lo, th_hi))
        S, worst = cache[sid]
        ineq.add_block(S.A, lay.P(m), S.b - worst[m - 1] - cfg.tighten)
    for S, off in zip(coll_sets, coll_offsets):
        worst = _worst_offsets(S.A, (path.R0 @ np.asarray(off, float))[None], path.omega, th_lo, th_hi)
        for m in range(1, M):
            ineq.add_block(S.A, lay.P(m), S.b - worst[m - 1] - cfg.tighten)
    if terminal is not None:
        ineq.add_block(terminal.A, lay.P(M - 1), terminal.b)

    # objective
    H = sp.lil_matrix((n, n))
    q = np.zeros(n)
    wd = 2.0 * (cfg.deviation_weight if not brake else 1e-2)
    for m in range(1, M):
        t = prob.t_hat[m]
        c = prob.pi_hat[m] - t * prob.phi_hat[m]
        i0, f = lay.P(m), lay.F(m)
        for k in range(3):
            H[i0 + k, i0 + k] += wd
            H[i0 + k, f] -= wd * t[k]
            H[f, i0 + k] -= wd * t[k]
        H[f, f] += wd
        q[i0:i0 + 3] -= wd * c
        q[f] += wd * float(t @ c)
    for m in range(M - 1):
        for k in range(3):
            H[lay.A(m) + k, lay.A(m) + k] += 2.0 * cfg.accel_weight
    if brake:
        for m in range(1, M):
            for k in range(3):
                H[lay.V(m) + k, lay.V(m) + k] += 2.0
    else:
        q[lay.F(M - 1)] -= cfg.progress_weight
    Aeq, beq = eq.matrix(n)
    G, h = ineq.matrix(n)
    return H.tocsc(), q, G, h, Aeq, beq


def _solve(state, path, cfg, prob, assign, coll_sets, coll_offsets, terminal=None, brake=False):
    P, q, G, h, Aeq, beq = _build(state, path, cfg, prob, assign, coll_sets, coll_offsets, terminal, brake)
    res = solve_qp(P, q, G, h, Aeq, beq, polish=True)
    if not res.ok:
        return None
    x = res.x
    # the interior-point answer is accepted only if it really is feasible
    if np.max(G @ x - h) > 1e-8 or np.max(np.abs(Aeq @ x - beq)) > 1e-8:
        return None
    return x


def _terminal_set(path, i, prob, cfg):
    """Neighbourhood of the next transition: S_{i+1} intersected with S_{i+2} grown by eps."""
    if i + 2 >= path.n_segments:
        return None
    if prob.phi_hat[-1] < path.segment_start(i + 2) - cfg.eps_phi:
        return None
    nxt = path.sets[i + 2]
    return ConvexPolytope(nxt.A, nxt.b + cfg.eps_phi)


def body_violation(state: TrackerState, path: ReferencePath, set_index=None):
    """Largest row violation of the hull (at the tracked orientation) in its assigned set."""
    k = state.active_segment if set_index is None else set_index
    R = path.orientation(state.phi)
    pts = state.position + path.body_offsets @ R.T
    return float(path.sets[k].max_violation(pts))


def step(state: TrackerState, path: ReferencePath, ws: Workspace, cfg: TrackerConfig):
    """One control step. Returns ``(acceleration, new_state)``.

    Raises :class:`TunnelViolation` when the current hull is outside its set
    by more than 1e-4.
    """
    viol = body_violation(state, path)
    if viol > 1e-4:
        raise TunnelViolation(state.step, viol)
    M = cfg.horizon_steps
    state = state.copy()
    state.horizon[0] = state.position
    try:
        coll_sets = update_collision_sets(state, path, ws)
    except PredictedCollision:
        # the predicted end may be unsafe; fall back to sets around the current points
        log.debug("predicted collision at step %d, using stationary collision sets", state.step)
        held = state.copy()
        held.horizon[-1] = held.position
        held.horizon_phi[-1] = held.phi
        coll_sets = update_collision_sets(held, path, ws)
    state.collision_sets = coll_sets
    offsets = [cp.offset for cp in state.collision_points]
    prob = _windows(state, path, cfg)
    i = state.active_segment
    m_s = split_index(state, path, i, cfg.eps_phi)

    def assignment(ms):
        return [i if m + 1 < ms else i + 1 for m in range(M)]

    attempts = []
    if m_s <= M:
        term = _terminal_set(path, i + 1, prob, cfg)
        if term is not None:
            attempts.append(("ok", m_s, term))
        attempts.append(("ok", m_s, None))
    else:
        term = _terminal_set(path, i, prob, cfg)
        if term is not None:
            attempts.append(("ok", M + 1, term))
    attempts.append(("ok" if m_s > M else "NoSplit", M + 1, None))

    x = None
    status = "Degraded"
    used_split = M + 1
    for tag, ms, term in attempts:
        x = _solve(state, path, cfg, prob, assignment(ms), coll_sets, offsets, term)
        if x is not None:
            status, used_split = tag, ms
            break
    if x is None:
        x = _solve(state, path, cfg, prob, assignment(M + 1), coll_sets, offsets, brake=True)
    lay = prob.lay
    if x is not None:
        A = x[lay.a:lay.f].reshape(M - 1, 3)
        Pm = x[lay.p:lay.v].reshape(M, 3)
        F = x[lay.f:]
        accel = A[0].copy()
        plan_pts = Pm
    else:
        # keep executing the previous (feasible, braking) plan
        prev = state.accel_plan
        accel = prev[1].copy() if prev is not None and len(prev) > 1 else np.zeros(3)
        A = np.vstack([prev[1:], np.zeros((1, 3))]) if prev is not None else np.zeros((M - 1, 3))
        plan_pts = np.vstack([state.horizon[1:], state.horizon[-1:]])
        F = np.concatenate([state.horizon_phi[1:], state.horizon_phi[-1:]])
        status = "Degraded"
        log.warning("tracker step %d: no feasible program, following the previous plan", state.step)

    dt = cfg.dt
    p_new = state.position + dt * state.velocity + 0.5 * dt * dt * accel
    v_new = state.velocity + dt * accel
    lo, hi = prob.windows[1]
    phi_new = float(np.clip(path.project(p_new, phi_hint=F[1], window=2 * cfg.trust + 1e-9), lo, hi))

    horizon = np.vstack([p_new, plan_pts[2:], plan_pts[-1:]])
    proj = [phi_new]
    for m in range(1, M):
        hint = F[min(m + 1, M - 1)]
        f = path.project(horizon[m], phi_hint=hint, window=2 * cfg.trust + 1e-9)
        proj.append(max(proj[-1], f))
    new_active = i + 1 if used_split <= 2 else i

    state.position = p_new
    state.velocity = v_new
    state.phi = max(state.phi, phi_new)
    state.horizon = horizon
    state.horizon_phi = np.array(proj)
    state.active_segment = new_active
    state.time += dt
    state.step += 1
    state.accel_plan = A.copy()
    state.last_status = status
    state.last_split = used_split
    return accel, state


# --- replanning --------------------------------------------------------------------

@dataclass
class ReplanResult:
    path: ReferencePath
    m_max: int | None
    p_max: np.ndarray | None
    start_set: ConvexPolytope | None
    t_plan: float
    cold: bool
    graph: object = None


def replan(state: TrackerState, path: ReferencePath, goal, ws: Workspace, request: PlanRequest,
           cfg: TrackerConfig) -> ReplanResult:
    """Plan from the current state to ``goal = (pf, Rf)``.

    The new start set covers the hull at the current pose and at the last
    horizon step still inside the current set; the new path is extended
    backward along the current velocity so horizon points behind the start
    still project onto it.
    """
    pf, Rf = goal
    t0 = time.perf_counter()
    cur = path.sets[state.active_segment]
    inside = cur.contains(state.horizon, MEMBER_TOL)
    R1 = path.orientation(state.phi)
    p1 = state.horizon[0]
    cold = not bool(inside[0])
    m_max, p_max, S_rep = None, None, None
    if not cold:
        m_max = int(np.flatnonzero(inside)[-1])
        p_max = state.horizon[m_max].copy()
        R_max = path.orientation(state.horizon_phi[m_max])
        pts = np.vstack([request.ee.points(p1, R1), request.ee.points(p_max, R_max)])
        try:
            S_rep = set_convex_hull(pts, ws, request.inflation.obstacle_margin)
        except HullInCollision:
            cold = True
            S_rep = None
    req = dataclasses.replace(request, p0=p1.copy(), R0=R1, pf=np.asarray(pf, float), Rf=np.asarray(Rf, float),
                              workspace=ws, start_set=S_rep)
    new_path, graph = plan(req)
    length = cfg.eps_phi if p_max is None else max(cfg.eps_phi, float(np.linalg.norm(p_max - p1)))
    v0 = state.velocity
    direction = v0 if np.linalg.norm(v0) > 1e-9 else new_path.tangent(0.0)
    new_path = add_backward_extension(new_path, direction, length)
    new_path.stats = dict(new_path.stats)
    return ReplanResult(new_path, m_max, p_max, S_rep, time.perf_counter() - t0, cold, graph)


def rebase(state: TrackerState, path: ReferencePath) -> TrackerState:
    """Carry the tracker state over to a freshly planned path starting at the current position."""
    s = state.copy()
    s.phi = 0.0
    proj = [0.0]
    for x in s.horizon[1:]:
        proj.append(max(proj[-1], path.project(x)))
    s.horizon_phi = np.array(proj)
    s.active_segment = 0
    return s


# --- closed loop -------------------------------------------------------------------

@dataclass(frozen=True)
class GoalChange:
    """New goal pose, triggered at a simulated time or a path parameter on the active path."""

    time: float | None
    position: tuple
    rotation: tuple
    phi: float | None = None

    def due(self, state: TrackerState):
        if self.time is not None:
            return state.time >= self.time - 1e-12
        return state.phi >= self.phi

    @property
    def pose(self):
        return np.asarray(self.position, float), np.asarray(self.rotation, float)


@dataclass
class TrackResult:
    records: list
    replans: list
    path: ReferencePath
    state: TrackerState
    reached: bool
    collisions: int
    degraded: int
    t_traj: float

    def positions(self):
        return np.array([r["position"] for r in self.records])


def _in_collision(pts, ws: Workspace):
    body = ConvexBody(pts)
    return any(closest_points(body, obs).distance <= 1e-12 for obs in ws.obstacles)


def simulate(path: ReferencePath, ws: Workspace, cfg: TrackerConfig, collision_points=(), events=(),
             request: PlanRequest | None = None, t_max=None, goal_tol=1e-4) -> TrackResult:
    """Run the tracker in closed loop until the goal is reached or ``t_max`` elapses.

    ``events`` are :class:`GoalChange` records, applied in order each at the
    first step where it is due; they need ``request`` as the planning template.
    """
    state = initial_state(path, cfg, collision_points)
    pending = list(events)
    if pending and request is None:
        raise ValueError("goal changes need a planning request template")
    if t_max is None:
        t_max = 4.0 * path.length / cfg.v_max + 10.0
    records, replans = [], []
    collisions = degraded = 0
    t_limit = t_max
    goal = path.goal
    while True:
        if pending and pending[0].due(state):
            ev = pending.pop(0)
            res = replan(state, path, ev.pose, ws, request, cfg)
            path = res.path
            state = rebase(state, path)
            goal = path.goal
            t_limit = state.time + 4.0 * path.length / cfg.v_max + 10.0
            replans.append({"time": state.time, "step": state.step, "goal": list(ev.position),
                            "m_max": res.m_max, "p_max": None if res.p_max is None else res.p_max.tolist(),
                            "cold": res.cold, "t_plan": res.t_plan, "n_sets": len(path.sets),
                            "set_ids": list(path.set_ids)})
        done = (np.linalg.norm(state.position - goal) <= goal_tol and np.linalg.norm(state.velocity) <= goal_tol
                and not pending)
        if done or state.time >= t_limit:
            break
        accel, state = step(state, path, ws, cfg)
        R = path.orientation(state.phi)
        pts = state.position + path.body_offsets @ R.T
        cpts = [state.position + R @ np.asarray(cp.offset) for cp in state.collision_points]
        hit = _in_collision(pts, ws) or any(_in_collision(c[None], ws) for c in cpts)
        collisions += int(hit)
        degraded += int(state.last_status == "Degraded")
        records.append({
            "t": state.time, "position": state.position.tolist(), "velocity": state.velocity.tolist(),
            "accel": accel.tolist(), "phi": state.phi, "set_id": int(path.set_ids[state.active_segment]),
            "segment": state.active_segment, "split": state.last_split, "status": state.last_status,
            "tunnel": body_violation(state, path),
            "coll_inside": [float(S.max_violation(c)) for S, c in zip(state.collision_sets, cpts)],
        })
    reached = bool(np.linalg.norm(state.position - goal) <= 1e-3)
    return TrackResult(records, replans, path, state, reached, collisions, degraded, state.time)


__all__ = ["TrackerConfig", "TrackerState", "CollisionPoint", "GoalChange", "TrackResult", "ReplanResult",
           "initial_state", "split_index", "collision_set_for_point", "update_collision_sets", "step",
           "replan", "rebase", "simulate", "body_violation", "BoundPlanError"]
