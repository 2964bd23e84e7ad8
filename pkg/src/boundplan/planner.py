"""Sampling-based exploration of free space with convex sets and path extraction.

:func:`plan` seeds sets around the start and goal poses, samples unexplored
free space until the two are connected in the set graph, refines the
shortest set path by re-inflating at its vertex points until the set path
stops changing, and finally optimizes via points and the rotation split.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (BudgetExceeded, EmptySet, ExplorationSaturated, GoalInCollision, HullInCollision,
                     SeedInCollision, SeedNotInterior, SeedOutsideDomain, StartInCollision, Unbounded)
from .geometry import ConvexBody, ConvexPolytope, check_rotation, closest_points
from .inflation import InflationConfig, Workspace, inflate, mvie, set_convex_hull
from .path import ReferencePath, phi_min, smooth_corners
from .set_graph import CostParams, SetGraph, shortest_set_path
from .viapoints import optimize_path

log = logging.getLogger(__name__)

__all__ = ["EndEffectorModel", "PlanRequest", "sample_free", "ee_fits", "plan", "phi_min",
           "optimize_path", "smooth_corners", "make_rng"]


@dataclass(frozen=True)
class EndEffectorModel:
    """Rigid hull given by offsets in the end-effector frame (origin = reference point)."""

    hull_offsets: tuple = ((0.0, 0.0, 0.0),)

    def __post_init__(self):
        arr = np.asarray(self.hull_offsets, dtype=float).reshape(-1, 3)
        if len(arr) < 1 or not np.all(np.isfinite(arr)):
            raise ValueError("end-effector needs at least one finite hull offset")
        object.__setattr__(self, "hull_offsets", tuple(map(tuple, arr.tolist())))

    @property
    def offsets(self):
        return np.asarray(self.hull_offsets, dtype=float)

    @property
    def body_offsets(self):
        return np.vstack([np.zeros(3), self.offsets])

    def points(self, p, R):
        return np.asarray(p, float) + self.body_offsets @ np.asarray(R, float).T

    @classmethod
    def box(cls, half_extents, center=(0.0, 0.0, 0.0)):
        h = np.asarray(half_extents, float)
        c = np.asarray(center, float)
        return cls(tuple(tuple(c + h * np.array([i, j, k])) for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)))


@dataclass
class PlanRequest:
    p0: np.ndarray
    R0: np.ndarray
    pf: np.ndarray
    Rf: np.ndarray
    workspace: Workspace
    ee: EndEffectorModel = field(default_factory=EndEffectorModel)
    cost_params: CostParams = field(default_factory=CostParams)
    inflation: InflationConfig = field(default_factory=InflationConfig)
    rng_seed: int = 0
    sample_budget: int = 200
    w_alpha: float = 1.0
    position_only: bool = False
    smooth: bool = True
    start_set: ConvexPolytope | None = None
    max_refinements: int = 25

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.pf = np.asarray(self.pf, dtype=float)
        self.R0 = check_rotation(self.R0, 1e-6)
        self.Rf = check_rotation(self.Rf, 1e-6)
        if not self.w_alpha > 0:
            raise ValueError("w_alpha must be positive")
        if self.sample_budget < 0:
            raise ValueError("sample_budget must be non-negative")


def make_rng(seed):
    """Counter-based generator so runs are reproducible from one integer."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _in_obstacle(x, ws: Workspace, margin, boxes):
    pt = ConvexBody([x])
    for obs, (lo, hi) in zip(ws.obstacles, boxes):
        if np.any(x < lo - margin) or np.any(x > hi + margin):
            continue
        body = obs.inflated_box(margin) if margin > 0 else obs
        if closest_points(pt, body).distance <= 1e-12:
            return True
    return False


def sample_free(ws: Workspace, existing_sets, rng, max_attempts=10_000, margin=0.0):
    """Uniform domain sample outside every obstacle and every existing set."""
    lo, hi = ws.box_bounds
    boxes = [(o.vertices.min(axis=0), o.vertices.max(axis=0)) for o in ws.obstacles]
    for _ in range(max_attempts):
        x = lo + (hi - lo) * rng.random(3)
        if any(np.all(s.halfspace_distances(x) <= 0) for s in existing_sets):
            continue
        if _in_obstacle(x, ws, margin, boxes):
            continue
        if not np.all(ws.domain.halfspace_distances(x) < 0):
            continue
        return x
    raise ExplorationSaturated(f"no free unexplored sample in {max_attempts} attempts")


def ee_fits(vertex_poly: ConvexPolytope, ee: EndEffectorModel, probes=None) -> bool:
    """Whether the hull fits in ``vertex_poly`` at one of the probe orientations."""
    if probes is None:
        probes = [np.eye(3)]
    V = ee.body_offsets
    for R in probes:
        # A (p + R l) <= b for all l  <=>  A p <= b - max_l A R l
        shift = np.max(vertex_poly.A @ (V @ np.asarray(R).T).T, axis=1)
        shrunk = ConvexPolytope(vertex_poly.A, vertex_poly.b - shift)
        if not shrunk.is_empty()[0]:
            return True
    return False


def _body_set(p, R, req: PlanRequest, error_cls):
    pts = req.ee.points(p, R)
    if not np.all(req.workspace.domain.contains(pts, tol=0.0)):
        raise error_cls(-1, distance=None)
    try:
        return set_convex_hull(pts, req.workspace, req.inflation.obstacle_margin)
    except HullInCollision as ex:
        raise error_cls(ex.obstacle_index, distance=ex.details.get("distance")) from None


def _seed_key(x):
    return tuple(np.round(np.asarray(x, float), 12).tolist())


def plan(req: PlanRequest):
    """Plan a bounded reference path. Returns ``(ReferencePath, SetGraph)``."""
    t_start = time.perf_counter()
    ws = req.workspace
    cfg = req.inflation
    rng = make_rng(req.rng_seed)
    probes = [np.eye(3), req.R0, req.Rf]

    def fit(poly):
        return ee_fits(poly, req.ee, probes)

    S0 = req.start_set if req.start_set is not None else _body_set(req.p0, req.R0, req, StartInCollision)
    Sf = _body_set(req.pf, req.Rf, req, GoalInCollision)
    g = SetGraph(req.p0, req.pf, req.cost_params)
    g.add_set(S0, mvie(S0), fit, role="start")
    connected = g.add_set(Sf, mvie(Sf), fit, role="final")

    previous = None
    used_seeds = set()
    n_samples = 0
    refinements = 0
    set_path = None
    while True:
        if connected:
            set_path = shortest_set_path(g)
            if set_path.set_ids == previous or refinements >= req.max_refinements:
                break
            previous = set_path.set_ids
            refinements += 1
            for vid in set_path.vertex_ids:
                vertex = g.vertex_list[vid]
                key = _seed_key(vertex.point)
                if key in used_seeds:
                    continue
                used_seeds.add(key)
                res = _refine_at(vertex, ws, cfg)
                if res is not None:
                    connected = g.add_set(res.poly, res.ellipsoid, fit)
        else:
            if n_samples >= req.sample_budget:
                g.stats.update(samples=n_samples, refinements=refinements)
                raise BudgetExceeded(f"no connection after {n_samples} samples", graph=g)
            seed = sample_free(ws, [s for s, _ in g.sets], rng, margin=cfg.obstacle_margin)
            n_samples += 1
            try:
                res = inflate(seed, ws, "mvie", cfg)
            except (SeedInCollision, SeedOutsideDomain, EmptySet, Unbounded) as ex:
                log.debug("skipping sample %s: %s", seed, ex)
                continue
            connected = g.add_set(res.poly, res.ellipsoid, fit)

    sets = [g.sets[i][0] for i in set_path.set_ids]
    costs = [g.set_sizes[i] for i in set_path.set_ids]
    init = [g.vertex_list[v].point for v in set_path.vertex_ids]
    if len(init) != len(sets) - 1:
        init = None
    path = optimize_path(sets, req.p0, req.R0, req.pf, req.Rf, req.ee.offsets, req.w_alpha, costs,
                         set_ids=set_path.set_ids, init_points=init, position_only=req.position_only)
    if req.smooth:
        path = smooth_corners(path)
    elapsed = time.perf_counter() - t_start
    stats = {"t_plan": elapsed, "samples": n_samples, "refinements": refinements,
             "n_sets": g.n_sets, "n_vertices": len(g.vertex_list), "graph_cost": set_path.cost,
             "objective_history": path.stats.get("objective_history", [])}
    path.stats = stats
    g.stats.update(stats)
    return path, g


def _refine_at(vertex, ws, cfg):
    """Fixed-center inflation at a vertex point, nudged inward if it sits on a boundary."""
    seed = np.asarray(vertex.point, float)
    for attempt in range(3):
        try:
            return inflate(seed, ws, "fixed_mid", cfg)
        except (SeedInCollision, SeedOutsideDomain, SeedNotInterior, EmptySet, Unbounded) as ex:
            log.debug("refinement seed %s rejected: %s", seed, ex)
            center, radius = vertex.poly.chebyshev()
            if radius <= 0:
                return None
            seed = seed + 0.05 * (center - seed) if attempt == 0 else seed + 0.5 * (center - seed)
    return None
