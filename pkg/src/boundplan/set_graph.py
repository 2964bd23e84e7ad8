"""Graph of free-space sets and shortest set sequences.

Vertices are non-empty pairwise intersections of stored sets. Two vertices
are joined when they share a parent set, and the edge is charged the
distance between their representative points scaled by the size of that
shared set, plus a constant bias per hop.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NoPath
from .geometry import ConvexPolytope, Ellipsoid, project_to_polytope

log = logging.getLogger(__name__)

SOURCE = -1
SINK = -2


@dataclass(frozen=True)
class CostParams:
    c_bias: float = 0.1
    w_size: float = 0.5

    def __post_init__(self):
        if not self.c_bias > 0:
            raise ValueError("c_bias must be positive")
        if not 0 < self.w_size <= 1:
            raise ValueError("w_size must lie in (0, 1]")


def size_cost(e: Ellipsoid, params: CostParams = CostParams()) -> float:
    """Cost multiplier that favours sets with large inscribed ellipsoids."""
    det = max(float(np.linalg.det(e.C)), 0.0)
    return 1.0 + params.w_size * float(np.tanh(0.5 - np.cbrt(det)))


def edge_cost(p_ab, p_bc, shared: Ellipsoid, params: CostParams = CostParams()) -> float:
    d = float(np.linalg.norm(np.asarray(p_ab, float) - np.asarray(p_bc, float)))
    return size_cost(shared, params) * d + params.c_bias


def project_to_vertex(target, vertex_poly: ConvexPolytope):
    """Closest point of ``vertex_poly`` to ``target`` (``target`` itself if inside)."""
    return project_to_polytope(target, vertex_poly)


@dataclass
class IntersectionVertex:
    id: int
    set_ids: tuple
    poly: ConvexPolytope
    point: np.ndarray


@dataclass
class SetPath:
    set_ids: list
    vertex_ids: list
    cost: float


@dataclass
class SetGraph:
    """Mutable graph of sets; mutations must be serialized by the caller."""

    p0: np.ndarray
    pf: np.ndarray
    params: CostParams = field(default_factory=CostParams)
    sets: list = field(default_factory=list)          # (poly, ellipsoid)
    set_sizes: list = field(default_factory=list)     # cached size costs
    vertices: dict = field(default_factory=dict)      # (a, b) -> IntersectionVertex
    vertex_list: list = field(default_factory=list)
    adjacency: dict = field(default_factory=dict)     # vid -> {vid: (shared, cost)}
    start_id: Optional[int] = None
    final_id: Optional[int] = None
    set_vertices: dict = field(default_factory=dict)  # set id -> [vid]
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.pf = np.asarray(self.pf, dtype=float)

    # -- queries ---------------------------------------------------------
    @property
    def n_sets(self):
        return len(self.sets)

    def edges(self):
        """Undirected edges as ``(u, v, shared, cost)`` with ``u < v``."""
        out = []
        for u in sorted(self.adjacency):
            for v, (shared, cost) in sorted(self.adjacency[u].items()):
                if u < v:
                    out.append((u, v, shared, cost))
        return out

    def anchor(self, set_id):
        if set_id == self.start_id:
            return self.p0
        if set_id == self.final_id:
            return self.pf
        vids = self.set_vertices.get(set_id)
        if vids:
            return self.vertex_list[vids[0]].point
        return None

    def connected(self):
        if self.start_id is None or self.final_id is None:
            return False
        if self.start_id == self.final_id:
            return True
        seen = {self.start_id}
        queue = deque([self.start_id])
        while queue:
            s = queue.popleft()
            for vid in self.set_vertices.get(s, []):
                for t in self.vertex_list[vid].set_ids:
                    if t not in seen:
                        if t == self.final_id:
                            return True
                        seen.add(t)
                        queue.append(t)
        return False

    # -- mutation ----------------------------------------------------------
    def add_set(self, poly: ConvexPolytope, e: Ellipsoid,
                fit: Callable[[ConvexPolytope], bool] | None = None,
                role: str | None = None) -> bool:
        """Insert a set, create its intersection vertices and edges.

        ``role`` may be ``"start"`` or ``"final"``. Returns whether the start
        and final sets are connected afterwards.
        """
        new = len(self.sets)
        self.sets.append((poly, e))
        self.set_sizes.append(size_cost(e, self.params))
        if role == "start":
            self.start_id = new
        elif role == "final":
            self.final_id = new
        elif role is not None:
            raise ValueError(f"unknown role {role!r}")

        hits = []
        for sid in range(new):
            inter = poly.intersect(self.sets[sid][0])
            empty, _, _ = inter.is_empty()
            if empty:
                continue
            if fit is not None and not fit(inter):
                continue
            hits.append((sid, inter))
        # anchored neighbours first so later vertices of this set can reuse them
        hits.sort(key=lambda h: (self.anchor(h[0]) is None, h[0]))
        for sid, inter in hits:
            target = self.anchor(sid)
            if target is None:
                target = self.anchor(new)
            if target is None:
                target = inter.chebyshev()[0]
            point = project_to_vertex(target, inter)
            self._add_vertex((sid, new), inter, point)
        return self.connected()

    def set_final(self, set_id):
        self.final_id = set_id

    def _add_vertex(self, key, poly, point):
        vid = len(self.vertex_list)
        v = IntersectionVertex(vid, key, poly, np.asarray(point, dtype=float))
        self.vertices[key] = v
        self.vertex_list.append(v)
        self.adjacency[vid] = {}
        for s in key:
            for other in self.set_vertices.get(s, []):
                cost = self._cost(v.point, self.vertex_list[other].point, s)
                self.adjacency[vid][other] = (s, cost)
                self.adjacency[other][vid] = (s, cost)
            self.set_vertices.setdefault(s, []).append(vid)
        return v

    def _cost(self, pa, pb, shared):
        d = float(np.linalg.norm(pa - pb))
        return self.set_sizes[shared] * d + self.params.c_bias

    # -- terminals -------------------------------------------------------
    def source_edges(self):
        return [(vid, self._cost(self.p0, self.vertex_list[vid].point, self.start_id))
                for vid in self.set_vertices.get(self.start_id, [])]

    def sink_edges(self):
        return [(vid, self._cost(self.vertex_list[vid].point, self.pf, self.final_id))
                for vid in self.set_vertices.get(self.final_id, [])]

    # -- serialization -----------------------------------------------------
    def to_dict(self):
        return {
            "start_set": self.start_id,
            "final_set": self.final_id,
            "p0": self.p0.tolist(),
            "pf": self.pf.tolist(),
            "params": {"c_bias": self.params.c_bias, "w_size": self.params.w_size},
            "sets": [{"id": i, "A": p.A.tolist(), "b": p.b.tolist(),
                      "ellipsoid": e.to_dict(), "size_cost": self.set_sizes[i]}
                     for i, (p, e) in enumerate(self.sets)],
            "vertices": [{"id": v.id, "sets": list(v.set_ids), "point": v.point.tolist()}
                         for v in self.vertex_list],
            "edges": [{"u": u, "v": v, "shared": s, "cost": c} for u, v, s, c in self.edges()],
        }


def add_set_to_graph(g: SetGraph, s: ConvexPolytope, e: Ellipsoid, fit=None, role=None) -> bool:
    return g.add_set(s, e, fit=fit, role=role)


def shortest_set_path(g: SetGraph) -> SetPath:
    """Dijkstra from the start anchor to the final anchor over intersection vertices.

    Ties are broken by the smaller vertex id, so the result is deterministic.
    """
    if g.start_id is None or g.final_id is None:
        raise NoPath("start or final set missing")
    if g.start_id == g.final_id:
        return SetPath([g.start_id], [], float(np.linalg.norm(g.pf - g.p0)) * g.set_sizes[g.start_id])
    sink = dict(g.sink_edges())
    dist = {SOURCE: 0.0}
    prev = {}
    heap = []
    for vid, c in g.source_edges():
        if c < dist.get(vid, np.inf):
            dist[vid] = c
            prev[vid] = SOURCE
            heapq.heappush(heap, (c, vid))
    done = set()
    best_sink = (np.inf, None)
    while heap:
        d, u = heapq.heappop(heap)
        if u in done or d > dist.get(u, np.inf):
            continue
        done.add(u)
        if d >= best_sink[0]:
            break
        if u in sink:
            cand = d + sink[u]
            if cand < best_sink[0]:
                best_sink = (cand, u)
        for v in sorted(g.adjacency[u]):
            if v in done:
                continue
            nd = d + g.adjacency[u][v][1]
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    cost, last = best_sink
    if last is None:
        raise NoPath("start and final sets are not connected")
    chain = [last]
    while prev[chain[-1]] != SOURCE:
        chain.append(prev[chain[-1]])
    chain.reverse()
    sets = [g.start_id]
    for u, v in zip(chain[:-1], chain[1:]):
        sets.append(g.adjacency[u][v][0])
    sets.append(g.final_id)
    # a vertex may contain the start (or final) set itself; collapse repeats
    out = [sets[0]]
    for s in sets[1:]:
        if s != out[-1]:
            out.append(s)
    return SetPath(out, chain, float(cost))
