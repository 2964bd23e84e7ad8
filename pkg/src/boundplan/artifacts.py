"""Run artifacts: metrics, JSON/CSV outputs, plot data and batch reports.

Every file written here is a deterministic function of the scenario and the
seed. Wall-clock measurements live in separate ``timings`` files so that
metric files can be compared by hash across runs.
"""

from __future__ import annotations

import csv
import glob as globmod
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import BoundPlanError, TunnelViolation
from .geometry import ConvexPolytope
from .path import ReferencePath
from .planner import plan
from .scenario import Scenario, canonical_json, dump_scenario, load_scenario
from .tracker import simulate

log = logging.getLogger(__name__)

TRAJ_FIELDS = ["t", "x", "y", "z", "vx", "vy", "vz", "phi", "set_id", "status"]


# --- metrics -----------------------------------------------------------------------

def path_metrics(path: ReferencePath) -> dict:
    seg = np.linalg.norm(np.diff(path.via_points, axis=0), axis=1)
    return {
        "path_length": float(np.sum(seg)),
        "orientation_length_deg": float(np.sum(np.abs(path.alphas)) * 180.0 / np.pi),
        "n_sets": len(path.set_ids),
        "set_ids": [int(s) for s in path.set_ids],
        "flags": list(path.flags),
        "n_blends": len(path.blends),
    }


def trajectory_metrics(rows) -> dict:
    """Duration, travelled length and status counts straight from the log rows."""
    if not rows:
        return {"T_traj": 0.0, "traj_length": 0.0, "n_steps": 0, "degraded": 0}
    P = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    return {
        "T_traj": float(rows[-1]["t"]),
        "traj_length": float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1))),
        "n_steps": len(rows) - 1,
        "degraded": sum(1 for r in rows if r["status"] == "Degraded"),
    }


# --- running ----------------------------------------------------------------------

@dataclass
class RunOutput:
    """In-memory artifact; ``exit_code`` follows the CLI convention."""

    scenario: Scenario
    seed: int
    metrics: dict
    timings: dict
    path: ReferencePath | None = None
    graph: object = None
    log_rows: list = field(default_factory=list)
    replans: list = field(default_factory=list)
    exit_code: int = 0


def run_plan(sc: Scenario, seed: int | None = None, position_only: bool | None = None) -> RunOutput:
    req = sc.plan_request(seed, position_only)
    metrics = {"scenario": sc.name, "seed": req.rng_seed, "status": "ok", "error": None}
    t0 = time.perf_counter()
    try:
        path, graph = plan(req)
    except BoundPlanError as ex:
        metrics.update(status=ex.code, error=str(ex))
        return RunOutput(sc, req.rng_seed, metrics, {"t_plan": time.perf_counter() - t0}, exit_code=2)
    timings = {"t_plan": float(path.stats.get("t_plan", time.perf_counter() - t0))}
    metrics.update(path_metrics(path))
    metrics.update(samples=path.stats.get("samples"), refinements=path.stats.get("refinements"),
                   graph_sets=graph.n_sets, graph_vertices=len(graph.vertex_list),
                   graph_cost=path.stats.get("graph_cost"))
    return RunOutput(sc, req.rng_seed, metrics, timings, path=path, graph=graph)


def _log_rows(start, records):
    start = [float(c) for c in start]
    rows = [{"t": 0.0, "x": start[0], "y": start[1], "z": start[2], "vx": 0.0, "vy": 0.0, "vz": 0.0,
             "phi": 0.0, "set_id": None, "status": "init"}]
    for r in records:
        p, v = r["position"], r["velocity"]
        rows.append({"t": float(r["t"]), "x": p[0], "y": p[1], "z": p[2], "vx": v[0], "vy": v[1], "vz": v[2],
                     "phi": float(r["phi"]), "set_id": int(r["set_id"]), "status": r["status"]})
    return rows


def run_track(sc: Scenario, path: ReferencePath | None = None, seed: int | None = None) -> RunOutput:
    """Plan (unless ``path`` is given) and simulate the tracker in closed loop."""
    if path is None:
        out = run_plan(sc, seed)
        if out.exit_code:
            return out
    else:
        req = sc.plan_request(seed)
        out = RunOutput(sc, req.rng_seed, {"scenario": sc.name, "seed": req.rng_seed, "status": "ok",
                                           "error": None, **path_metrics(path)}, {}, path=path)
    req = sc.plan_request(seed)
    cfg = sc.tracker_config()
    try:
        res = simulate(out.path, req.workspace, cfg, sc.collision_point_models(), sc.goal_changes(), req,
                       t_max=sc.tracker.t_max)
    except TunnelViolation as ex:
        out.metrics.update(status=ex.code, error=str(ex), violation_step=ex.step)
        out.exit_code = 3
        return out
    except BoundPlanError as ex:
        out.metrics.update(status=ex.code, error=str(ex))
        out.exit_code = 2
        return out
    out.log_rows = _log_rows(out.path.start, res.records)
    out.replans = res.replans
    final_goal = res.path.goal
    out.metrics.update(trajectory_metrics(out.log_rows))
    out.metrics.update(
        collisions=res.collisions, reached=res.reached,
        final_error=float(np.linalg.norm(res.state.position - final_goal)),
        replans=[{k: v for k, v in r.items() if k != "t_plan"} for r in res.replans])
    out.timings["replan_t_plan"] = [r["t_plan"] for r in res.replans]
    if not res.reached:
        out.metrics["status"] = "GoalNotReached"
    return out


# --- writing --------------------------------------------------------------------

def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def trajectory_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in TRAJ_FIELDS])
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _parse_field(k, v):
    if k == "status":
        return v
    if k == "set_id":
        return int(v) if v != "" else None
    return float(v)


def read_trajectory_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({k: _parse_field(k, r[k]) for k in TRAJ_FIELDS})
    return rows


def write_artifact(out: RunOutput, out_dir, dump_graph=False) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    _write(d / "scenario.json", dump_scenario(out.scenario))
    _write(d / "metrics.json", canonical_json(out.metrics))
    _write(d / "timings.json", canonical_json(out.timings))
    if out.path is not None:
        _write(d / "path.json", canonical_json(out.path.to_dict()))
        sets = [{"id": int(i), "A": p.A.tolist(), "b": p.b.tolist()} for i, p in zip(out.path.set_ids, out.path.sets)]
        _write(d / "sets.json", canonical_json({"set_ids": [int(i) for i in out.path.set_ids], "sets": sets}))
    if dump_graph and out.graph is not None:
        _write(d / "graph.json", canonical_json(out.graph.to_dict()))
    if out.log_rows:
        _write(d / "trajectory.csv", trajectory_csv(out.log_rows))
        _write(d / "replans.json", canonical_json({"replans": [{k: v for k, v in r.items() if k != "t_plan"}
                                                                 for r in out.replans]}))
    return d


def load_path(path_file) -> ReferencePath:
    return ReferencePath.from_dict(json.loads(Path(path_file).read_text()))


# --- plot data ------------------------------------------------------------------

def _order_face(P, normal):
    """Order coplanar points counter-clockwise about ``normal``."""
    c = P.mean(axis=0)
    u = P[0] - c
    if np.linalg.norm(u) < 1e-15:
        return P
    u /= np.linalg.norm(u)
    w = np.cross(normal, u)
    ang = np.arctan2((P - c) @ w, (P - c) @ u)
    return P[np.argsort(ang, kind="stable")]


def _unique_rows(P, tol=1e-10):
    out = []
    for p in P:
        if not any(np.max(np.abs(p - q)) <= tol for q in out):
            out.append(p)
    return np.array(out)


def polytope_faces(poly: ConvexPolytope, tol=1e-9):
    """Faces of a bounded polytope as ``(row index, ordered vertices)`` pairs."""
    center, radius = poly.chebyshev()
    if radius <= 0:
        return []
    hs = HalfspaceIntersection(np.hstack([poly.A, -poly.b[:, None]]), center)
    V = _unique_rows(hs.intersections)
    faces = []
    for j, (a, b) in enumerate(zip(poly.A, poly.b)):
        on = V[np.abs(V @ a - b) <= tol]
        if len(on) >= 3:
            faces.append((j, _order_face(on, a)))
    return faces


def body_faces(vertices, tol=1e-9):
    V = _unique_rows(np.asarray(vertices, dtype=float))
    if len(V) < 4:
        return [V] if len(V) else []
    try:
        hull = ConvexHull(V)
    except QhullError:
        # flat body: a single polygon in its best-fit plane
        c = V.mean(axis=0)
        n = np.linalg.svd(V - c)[2][-1]
        return [_order_face(V, n)]
    faces, seen = [], []
    for eq in hull.equations:
        n, off = eq[:3], eq[3]
        if any(np.allclose(eq, s, atol=1e-9) for s in seen):
            continue
        seen.append(eq)
        on = V[np.abs(V @ n + off) <= tol * max(1.0, np.abs(V).max())]
        faces.append(_order_face(on, n))
    return faces


def emit_plot_data(artifact_dir, n_samples=400) -> Path:
    """Write polylines and face lists for the path, trajectory, obstacles and sets."""
    d = Path(artifact_dir)
    sc = load_scenario(d / "scenario.json")
    out = d / "plot"
    out.mkdir(exist_ok=True)
    obstacles = [{"name": o.name, "faces": [f.tolist() for f in body_faces(o.body().vertices)]}
                 for o in sc.obstacles]
    _write(out / "obstacles.json", canonical_json({"obstacles": obstacles}))
    if (d / "path.json").exists():
        path = load_path(d / "path.json")
        phis = np.linspace(path.phi_start, path.phi_end, n_samples)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phi", "x", "y", "z"])
        for f in phis:
            w.writerow([repr(float(f))] + [repr(float(c)) for c in path.position(f)])
        _write(out / "path.csv", buf.getvalue())
        sets = []
        for sid, poly in zip(path.set_ids, path.sets):
            sets.append({"id": int(sid), "faces": [{"row": j, "vertices": f.tolist()}
                                                   for j, f in polytope_faces(poly)]})
        _write(out / "sets.json", canonical_json({"sets": sets}))
    if (d / "trajectory.csv").exists():
        rows = read_trajectory_csv(d / "trajectory.csv")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "y", "z"])
        for r in rows:
            w.writerow([repr(r[k]) for k in ("t", "x", "y", "z")])
        _write(out / "trajectory.csv", buf.getvalue())
    return out


# --- batch runs -----------------------------------------------------------------

def _stats(vals):
    vals = [float(v) for v in vals if v is not None]
    if not vals:
        return None
    return {"min": min(vals), "avg": float(np.mean(vals)), "max": max(vals)}


def expand(pattern):
    files = sorted(globmod.glob(str(pattern)))
    return [Path(f) for f in files if f.endswith(".json")]


def bench(files, reps=1, seeds=None, track=True):
    """Run every scenario ``reps`` times. Returns ``(report, timings)``.

    Seeds default to the scenario's own seed plus the repetition index.
    ``report`` is timing-free and therefore reproducible bit for bit.
    """
    report, timings = {"scenarios": []}, {"scenarios": []}
    for f in files:
        sc = load_scenario(f)
        run_seeds = list(seeds) if seeds is not None else [sc.planner.rng_seed + r for r in range(reps)]
        runs, tims = [], []
        for s in run_seeds:
            out = run_track(sc, seed=s) if track else run_plan(sc, s)
            runs.append(out.metrics)
            tims.append(out.timings)
        ok = [m for m in runs if m["status"] == "ok"]
        report["scenarios"].append({
            "scenario": sc.name, "file": Path(f).name, "runs": len(runs), "seeds": run_seeds,
            "failures": len(runs) - len(ok), "errors": sorted({m["status"] for m in runs if m["status"] != "ok"}),
            "path_length": _stats(m.get("path_length") for m in ok),
            "orientation_length_deg": _stats(m.get("orientation_length_deg") for m in ok),
            "n_sets": _stats(m.get("n_sets") for m in ok),
            "T_traj": _stats(m.get("T_traj") for m in ok),
            "collisions": sum(int(m.get("collisions", 0)) for m in runs),
            "metrics_sha256": [hashlib.sha256(canonical_json(m).encode()).hexdigest() for m in runs],
        })
        replan_times = [t for tm in tims for t in tm.get("replan_t_plan", [])]
        timings["scenarios"].append({"scenario": sc.name, "t_plan": _stats(tm.get("t_plan") for tm in tims),
                                     "replan_t_plan": _stats(replan_times)})
    return report, timings


def format_table(report, timings) -> str:
    head = f"{'scenario':<28}{'runs':>5}{'fail':>5}{'t_plan min/avg/max [s]':>26}{'path len avg':>14}{'T_traj avg':>12}"
    lines = [head, "-" * len(head)]
    for r, t in zip(report["scenarios"], timings["scenarios"]):
        tp = t["t_plan"]
        tp_s = f"{tp['min']:.3f}/{tp['avg']:.3f}/{tp['max']:.3f}" if tp else "-"
        pl = f"{r['path_length']['avg']:.3f}" if r["path_length"] else "-"
        tt = f"{r['T_traj']['avg']:.2f}" if r["T_traj"] else "-"
        lines.append(f"{r['scenario']:<28}{r['runs']:>5}{r['failures']:>5}{tp_s:>26}{pl:>14}{tt:>12}")
        rp = t["replan_t_plan"]
        if rp:
            lines.append(f"{'  replans':<28}{'':>10}{rp['min']:.3f}/{rp['avg']:.3f}/{rp['max']:.3f}".rstrip())
    return "\n".join(lines)
