import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundplan.errors import BoundPlanError, PredictedCollision, TunnelViolation
from boundplan.geometry import ConvexBody, ConvexPolytope, closest_points, rotation_exp
from boundplan.inflation import Workspace, excludes_obstacles, set_convex_hull
from boundplan.path import ReferencePath
from boundplan.planner import EndEffectorModel, PlanRequest, plan
from boundplan.scenario import bundled
from boundplan.tracker import (CollisionPoint, TrackerConfig, TrackerState, collision_set_for_point,
                               initial_state, replan, simulate, split_index, step, update_collision_sets)
from scenes import random_boxes

I3 = np.eye(3)


def box(lo, hi):
    return ConvexPolytope.box(lo, hi)


def two_box_path():
    S0, S1 = box([0, 0, 0], [1.1, 1, 1]), box([0.9, 0, 0], [2, 1, 1])
    q = np.array([[0.2, 0.5, 0.5], [1.0, 0.5, 0.5], [1.8, 0.5, 0.5]])
    return ReferencePath(q, [0, 0], [1, 0, 0], 0.0, I3, I3, [S0, S1], [0, 1], [[0, 0, 0]])


def state_with_horizon(path, H):
    H = np.asarray(H, float)
    M = len(H)
    st_ = initial_state(path, TrackerConfig(horizon_steps=M))
    st_.horizon = H
    st_.horizon_phi = np.array([path.project(x) for x in H])
    return st_


def brute_split(state, path, i, eps):
    phi_i = path.knots[i + 1]
    for m, (x, f) in enumerate(zip(state.horizon, state.horizon_phi), start=1):
        in_a = np.all(path.sets[i].A @ x <= path.sets[i].b + 1e-9)
        in_b = np.all(path.sets[i + 1].A @ x <= path.sets[i + 1].b + 1e-9)
        if f > phi_i - eps and in_a and in_b:
            return m
    return len(state.horizon) + 1


# --- split index ------------------------------------------------------------------------

def test_split_whole_horizon_in_intersection():
    path = two_box_path()
    H = np.column_stack([np.linspace(0.99, 1.05, 10), np.full(10, 0.5), np.full(10, 0.5)])
    assert split_index(state_with_horizon(path, H), path, 0, 0.02) == 1


def test_split_sentinel_when_horizon_in_first_set_only():
    path = two_box_path()
    H = np.column_stack([np.linspace(0.3, 0.8, 10), np.full(10, 0.5), np.full(10, 0.5)])
    assert split_index(state_with_horizon(path, H), path, 0, 0.02) == 11


def test_split_at_step_seven():
    path = two_box_path()
    xs = np.array([0.5, 0.6, 0.7, 0.8, 0.85, 0.95, 0.99, 1.02, 1.05, 1.1, 1.15, 1.2])
    H = np.column_stack([xs, np.full(12, 0.5), np.full(12, 0.5)])
    s = state_with_horizon(path, H)
    assert split_index(s, path, 0, 0.02) == 7
    assert brute_split(s, path, 0, 0.02) == 7


@given(st.integers(0, 2**31), st.floats(0, 0.2))
def test_split_matches_brute_force(seed, eps):
    path = two_box_path()
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(0.3, 1.8, 15))
    H = np.column_stack([xs, 0.5 + rng.uniform(-0.6, 0.6, 15), np.full(15, 0.5)])
    s = state_with_horizon(path, H)
    assert split_index(s, path, 0, eps) == brute_split(s, path, 0, eps)


# --- collision sets -------------------------------------------------------------------------

def test_zero_length_segment_is_point_set():
    ws = Workspace.box([-2] * 3, [2] * 3, [ConvexBody([[1, 0, 0]]), ConvexBody.box([0, 1, 0], [1, 2, 1])])
    p = np.array([0.1, 0.2, 0.3])
    a = collision_set_for_point(p, p, ws, 0.01)
    b = set_convex_hull([p], ws, 0.01)
    np.testing.assert_allclose(a.A, b.A, atol=1e-12)
    np.testing.assert_allclose(a.b, b.b, atol=1e-12)


@pytest.mark.parametrize("margin", [0.0, 0.1])
def test_segment_point_obstacle_row(margin):
    ws = Workspace.box([-2] * 3, [2] * 3, [ConvexBody([[0.5, 1, 0]])])
    S = collision_set_for_point([0, 0, 0], [1, 0, 0], ws, margin)
    np.testing.assert_allclose(S.A[0], [0, 1, 0], atol=1e-12)
    assert S.b[0] == pytest.approx(1 - margin, abs=1e-12)


def test_five_box_scene_matches_generic_hull():
    rng = np.random.default_rng(8)
    obs = [ConvexBody.box([0.1, 0.6, 0.1], [0.3, 0.9, 0.4]), ConvexBody.box([0.6, 0.6, 0.5], [0.9, 0.8, 0.9]),
           ConvexBody.box([0.4, 0.0, 0.0], [0.6, 0.3, 0.3]), ConvexBody.box([0.7, 0.1, 0.6], [0.95, 0.35, 0.8]),
           ConvexBody.box([0.0, 0.2, 0.7], [0.2, 0.4, 0.95])]
    ws = Workspace.box([0] * 3, [1] * 3, obs)
    p0, p1 = np.array([0.3, 0.45, 0.5]), np.array([0.7, 0.45, 0.4])
    S = collision_set_for_point(p0, p1, ws, 0.0)
    G = set_convex_hull([p0, p1], ws, 0.0)
    assert np.all(S.contains(np.array([p0, p1])))
    assert excludes_obstacles(S, obs)
    X = rng.uniform(0, 1, (5000, 3))
    assert np.mean(S.contains(X, 0.0) == G.contains(X, 0.0)) > 0.999


def test_segment_in_collision_raises():
    ws = Workspace.box([-2] * 3, [2] * 3, [ConvexBody.box([0.4, -0.1, -0.1], [0.6, 0.1, 0.1])])
    with pytest.raises(PredictedCollision):
        collision_set_for_point([0, 0, 0], [1, 0, 0], ws)


def test_first_update_is_stationary_point_sets():
    path = two_box_path()
    ws = Workspace.box([0] * 3, [2, 1, 1], [ConvexBody.box([0.5, 0.8, 0.8], [0.7, 1, 1])])
    cps = [CollisionPoint((0, 0.1, 0.1), 0.01), CollisionPoint((0, -0.1, 0), 0.0)]
    s = initial_state(path, TrackerConfig(), cps)
    sets = update_collision_sets(s, path, ws)
    assert len(sets) == 2
    for S, cp in zip(sets, cps):
        assert S.contains(s.position + np.asarray(cp.offset), 1e-12)
        assert excludes_obstacles(S, ws.obstacles)


# --- stepping ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(horizon_steps=1)
    with pytest.raises(ValueError):
        TrackerConfig(dt=0)
    with pytest.raises(ValueError):
        TrackerConfig(v_max=10.0, a_max=0.1)
    with pytest.raises(ValueError):
        CollisionPoint((0, 0, 0), -1)


def straight_case():
    S = box([0, 0, 0], [1, 1, 1])
    q = np.array([[0.1, 0.5, 0.5], [0.9, 0.5, 0.5]])
    path = ReferencePath(q, [0.0], [1, 0, 0], 0.0, I3, I3, [S], [0], [[0, 0, 0]])
    return path, Workspace.box([0] * 3, [1] * 3)


def test_straight_path_first_step_accelerates_along_line():
    path, ws = straight_case()
    cfg = TrackerConfig()
    accel, s = step(initial_state(path, cfg), path, ws, cfg)
    assert accel[0] > 0
    np.testing.assert_allclose(accel[1:], 0, atol=1e-6)
    np.testing.assert_allclose(s.horizon[:, 1:], 0.5, atol=1e-6)
    assert s.phi > 0


def test_straight_path_reaches_goal():
    path, ws = straight_case()
    cfg = TrackerConfig()
    res = simulate(path, ws, cfg)
    assert res.reached
    assert np.linalg.norm(res.state.position - path.goal) <= 1e-3
    # the command decays: the last ones are tiny compared with the limit
    A = np.array([np.linalg.norm(r["accel"]) for r in res.records])
    assert A[-3:].max() <= 0.01 * cfg.a_max and A.max() > 0.5 * cfg.a_max
    P = res.positions()
    assert np.max(np.abs(P[:, 1:] - 0.5)) <= 1e-6
    phis = [r["phi"] for r in res.records]
    assert np.all(np.diff(phis) >= 0)
    T_max = 4 * path.length / cfg.v_max + 10
    assert res.t_traj <= T_max


def test_tunnel_violation_raised():
    path, ws = straight_case()
    cfg = TrackerConfig()
    s = initial_state(path, cfg)
    s.position = np.array([1.2, 0.5, 0.5])
    with pytest.raises(TunnelViolation) as exc:
        step(s, path, ws, cfg)
    assert exc.value.step == 0


def replay_split(path, cfg, ws, n_steps=200):
    """Run the loop and re-check every predicted step against the set it was assigned."""
    s = initial_state(path, cfg)
    worst = -np.inf
    for _ in range(n_steps):
        i = s.active_segment
        _, s = step(s, path, ws, cfg)
        ms = s.last_split
        # horizon row j > 0 is old plan step j + 2 (1-based)
        for j in range(1, cfg.horizon_steps - 1):
            k = i if j + 2 < ms else i + 1
            worst = max(worst, path.sets[k].max_violation(s.horizon[j]))
        if np.linalg.norm(s.position - path.goal) < 1e-6:
            break
    return worst, s


def test_corner_path_respects_split_assignment():
    S0, S1 = box([0, 0, 0], [1, 0.3, 1]), box([0.7, 0, 0], [1, 1, 1])
    q = np.array([[0.15, 0.15, 0.5], [0.85, 0.15, 0.5], [0.85, 0.85, 0.5]])
    path = ReferencePath(q, [0, 0], [1, 0, 0], 0.0, I3, I3, [S0, S1], [0, 1], [[0, 0, 0]])
    cfg = TrackerConfig()
    worst, s = replay_split(path, cfg, Workspace.box([0] * 3, [1] * 3))
    assert worst <= 1e-6
    assert np.linalg.norm(s.position - path.goal) <= 1e-3


@pytest.fixture(scope="module")
def open_box_run():
    sc = bundled("open_box")
    req = sc.plan_request()
    path, _ = plan(req)
    res = simulate(path, req.workspace, sc.tracker_config(), sc.collision_point_models())
    return sc, path, res


def test_open_box_tunnel_and_collision_sets(open_box_run):
    sc, path, res = open_box_run
    assert res.reached and res.collisions == 0
    assert max(r["tunnel"] for r in res.records) <= 1e-6
    assert max(max(r["coll_inside"]) for r in res.records) <= 1e-6


def test_obstacle_split_gives_same_motion():
    sc = bundled("corridor")
    req = sc.plan_request()
    path, _ = plan(req)
    ws = req.workspace
    split = Workspace(ws.domain, [b for o in ws.obstacles for b in split_box(o)])
    cfg = sc.tracker_config()
    cps = sc.collision_point_models()
    a = simulate(path, ws, cfg, cps).positions()
    b = simulate(path, split, cfg, cps).positions()
    assert a.shape == b.shape
    assert np.max(np.linalg.norm(a - b, axis=1)) < 1e-6


def split_box(body):
    lo, hi = body.vertices.min(axis=0), body.vertices.max(axis=0)
    mid = 0.5 * (lo + hi)
    out = []
    for ix in range(2):
        for iy in range(2):
            for iz in range(2):
                sel = np.array([ix, iy, iz])
                out.append(ConvexBody.box(np.where(sel, mid, lo), np.where(sel, hi, mid)))
    return out


# --- replanning -------------------------------------------------------------------------

def test_replan_with_unchanged_goal_keeps_direction():
    sc = bundled("corridor")
    req = sc.plan_request()
    path, _ = plan(req)
    cfg = sc.tracker_config()
    s = initial_state(path, cfg)
    for _ in range(6):
        _, s = step(s, path, req.workspace, cfg)
    res = replan(s, path, (path.goal, path.Rf), req.workspace, req, cfg)
    old = path.tangent(s.phi)
    new = res.path.tangent(0.0)
    angle = np.degrees(np.arccos(np.clip(old @ new, -1, 1)))
    assert angle <= 5.0
    assert not res.cold


def test_replan_farthest_point_is_horizon_end_when_all_inside():
    path, ws = straight_case()
    cfg = TrackerConfig()
    s = initial_state(path, cfg)
    for _ in range(3):
        _, s = step(s, path, ws, cfg)
    req = PlanRequest(path.start, I3, path.goal, I3, ws)
    res = replan(s, path, (np.array([0.9, 0.6, 0.5]), I3), ws, req, cfg)
    assert res.m_max == cfg.horizon_steps - 1
    np.testing.assert_array_equal(res.p_max, s.horizon[-1])
    assert np.all(res.start_set.contains(s.horizon[[0, -1]]))
    # the new path starts at the current position and is extended backwards
    np.testing.assert_allclose(res.path.start, s.position)
    assert res.path.extension >= cfg.eps_phi


def test_shelf_goal_changes():
    sc = bundled("shelf_replan")
    req = sc.plan_request()
    path, _ = plan(req)
    cfg = sc.tracker_config()
    res = simulate(path, req.workspace, cfg, sc.collision_point_models(), sc.goal_changes(), req)
    assert len(res.replans) == 2
    assert res.collisions == 0
    P = np.vstack([path.start, res.positions()])
    assert np.max(np.abs(np.diff(P, axis=0))) <= cfg.v_max * cfg.dt + 1e-9
    A = np.array([r["accel"] for r in res.records])
    assert np.max(np.abs(A)) <= cfg.a_max + 1e-6
    assert np.linalg.norm(res.state.position - np.array(sc.replan_events[-1].goal.position)) <= 1e-3


# --- random scenes ----------------------------------------------------------------------

@settings(max_examples=6)
@given(st.integers(0, 2**31))
def test_tunnel_safety_random_scenes(seed):
    rng = np.random.default_rng(seed)
    ws = Workspace.box([0, 0, 0], [1, 1, 1], random_boxes(rng, 4, size=(0.1, 0.3)))
    from scenes import free_point
    p0, pf = free_point(rng, ws, 0.06), free_point(rng, ws, 0.06)
    if p0 is None or pf is None:
        return
    req = PlanRequest(p0, I3, pf, rotation_exp([0, 0, 1], 0.5), ws, EndEffectorModel.box([0.02] * 3), rng_seed=seed)
    try:
        path, _ = plan(req)
    except BoundPlanError:
        return
    res = simulate(path, ws, TrackerConfig())
    assert max(r["tunnel"] for r in res.records) <= 1e-6
    assert res.collisions == 0
    assert res.reached
