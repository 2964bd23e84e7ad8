import copy
import csv
import hashlib
import json

import numpy as np
import pytest

from boundplan.artifacts import (body_faces, emit_plot_data, path_metrics, polytope_faces, read_trajectory_csv,
                                 run_plan, run_track, trajectory_csv, write_artifact)
from boundplan.cli import main
from boundplan.geometry import ConvexPolytope
from boundplan.scenario import (ScenarioError, bundled, bundled_dir, canonical_json, dump_scenario, load_scenario,
                                parse_scenario)

QUAT_ID = [1.0, 0.0, 0.0, 0.0]


def base_scenario(**over):
    d = {
        "schema_version": 1,
        "name": "empty",
        "domain": {"min": [0, 0, 0], "max": [1, 1, 1]},
        "obstacles": [],
        "start": {"position": [0.1, 0.1, 0.1], "quaternion": QUAT_ID},
        "goal": {"position": [0.9, 0.8, 0.7], "quaternion": QUAT_ID},
        "end_effector": {"box_half_extents": [0.02, 0.02, 0.02]},
    }
    d.update(over)
    return d


def write(tmp_path, d, name="sc.json"):
    f = tmp_path / name
    f.write_text(json.dumps(d))
    return f


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- schema ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(p.stem for p in bundled_dir().glob("*.json")))
def test_round_trip_is_fixed_point(name):
    text = dump_scenario(bundled(name))
    again = dump_scenario(parse_scenario(text))
    assert text == again
    assert (bundled_dir() / f"{name}.json").read_text() == text


def test_malformed_quaternion_names_field():
    d = base_scenario()
    d["goal"]["quaternion"] = [1.0, 0.1, 0.0, 0.0]
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(json.dumps(d))
    assert "goal.quaternion" in str(exc.value)


def test_malformed_quaternion_cli_exit_1(tmp_path, capsys):
    d = base_scenario()
    d["start"]["quaternion"] = [0.5, 0.5, 0.5]
    assert main(["plan", str(write(tmp_path, d)), "--out", str(tmp_path / "o")]) == 1
    assert "start.quaternion" in capsys.readouterr().err


def test_json_syntax_error_reports_line(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "schema_version": 1,\n  "name": \n}')
    with pytest.raises(ScenarioError) as exc:
        load_scenario(f)
    assert f"{f}:4:" in str(exc.value)


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d.update(obstacles=[{"name": "a", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}},
                                   {"name": "a", "vertices": [[0, 0, 0]]}]), "duplicate names"),
    (lambda d: d["domain"].update(max=[1, -1, 1]), "domain"),
    (lambda d: d.update(extra_field=1), "extra_field"),
    (lambda d: d.update(obstacles=[{"name": "x"}]), "obstacles.0"),
    (lambda d: d.update(replan_events=[{"name": "e", "goal": d["goal"]}]), "replan_events.0"),
])
def test_validation_errors(mutate, field):
    d = base_scenario()
    mutate(d)
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(json.dumps(d))
    assert field in str(exc.value)


def test_missing_file_is_input_error(tmp_path):
    assert main(["plan", str(tmp_path / "nope.json")]) == 1


# --- plan -------------------------------------------------------------------------------

def test_cli_plan_empty_workspace(tmp_path):
    f = write(tmp_path, base_scenario())
    out = tmp_path / "o"
    assert main(["plan", str(f), "--out", str(out), "--dump-graph", "--seed", "3"]) == 0
    m = json.loads((out / "metrics.json").read_text())
    path = json.loads((out / "path.json").read_text())
    assert len(path["via_points"]) - 1 <= 2
    assert m["seed"] == 3 and m["status"] == "ok"
    q = np.array(path["via_points"])
    assert m["path_length"] == pytest.approx(np.sum(np.linalg.norm(np.diff(q, axis=0), axis=1)), abs=1e-9)
    assert m["orientation_length_deg"] == pytest.approx(np.sum(np.abs(path["alphas"])) * 180 / np.pi, abs=1e-6)
    assert (out / "graph.json").exists() and (out / "sets.json").exists()
    assert "t_plan" not in m and "t_plan" in json.loads((out / "timings.json").read_text())


def test_cli_plan_open_box(tmp_path):
    out = tmp_path / "o"
    assert main(["plan", str(bundled_dir() / "open_box.json"), "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["n_sets"] == 3 and len(m["set_ids"]) == 3
    assert m["path_length"] > 0 and m["graph_sets"] >= 3


def test_cli_position_only_flag(tmp_path):
    out = tmp_path / "o"
    assert main(["plan", str(bundled_dir() / "corridor.json"), "--out", str(out), "--position-only"]) == 0
    assert "PositionOnly" in json.loads((out / "metrics.json").read_text())["flags"]


def tight_corridor():
    # the only opening is 0.04 wide while the hull is 0.1 wide
    obstacles = [
        {"name": "lower", "box": {"min": [0.45, 0.0, 0.0], "max": [0.55, 1.0, 0.48]}},
        {"name": "upper", "box": {"min": [0.45, 0.0, 0.52], "max": [0.55, 1.0, 1.0]}},
    ]
    return base_scenario(name="tight", obstacles=obstacles,
                         start={"position": [0.2, 0.5, 0.5], "quaternion": QUAT_ID},
                         goal={"position": [0.8, 0.5, 0.5], "quaternion": QUAT_ID},
                         end_effector={"box_half_extents": [0.05, 0.05, 0.05]},
                         planner={"sample_budget": 30})


def test_cli_tight_corridor_exit_2(tmp_path):
    out = tmp_path / "o"
    assert main(["plan", str(write(tmp_path, tight_corridor())), "--out", str(out)]) == 2
    m = json.loads((out / "metrics.json").read_text())
    assert m["status"] in ("BudgetExceeded", "ExplorationSaturated", "PathInfeasible", "NoPath")
    assert m["error"]


def test_cli_track_tunnel_violation_exit_3(tmp_path, capsys):
    f = bundled_dir() / "corridor.json"
    out = tmp_path / "p"
    assert main(["plan", str(f), "--out", str(out)]) == 0
    path = json.loads((out / "path.json").read_text())
    # shrink the first set so the start pose lies outside it
    start = np.array(path["via_points"][0])
    s0 = path["sets"][0]
    A, b = np.array(s0["A"]), np.array(s0["b"])
    j = int(np.argmax(A @ [-1, 0, 0]))
    b[j] = A[j] @ start - 0.01
    s0["b"] = b.tolist()
    bad = tmp_path / "bad_path.json"
    bad.write_text(json.dumps(path))
    assert main(["track", str(f), "--path", str(bad), "--out", str(tmp_path / "t")]) == 3
    m = json.loads((tmp_path / "t" / "metrics.json").read_text())
    assert m["status"] == "TunnelViolation" and m["violation_step"] == 0
    assert "step 0" in capsys.readouterr().err


def test_cli_track_corridor_from_path(tmp_path):
    f = bundled_dir() / "corridor.json"
    assert main(["plan", str(f), "--out", str(tmp_path / "p")]) == 0
    assert main(["track", str(f), "--path", str(tmp_path / "p" / "path.json"), "--out", str(tmp_path / "t")]) == 0
    m = json.loads((tmp_path / "t" / "metrics.json").read_text())
    assert m["reached"] and m["collisions"] == 0 and m["status"] == "ok"
    rows = read_trajectory_csv(tmp_path / "t" / "trajectory.csv")
    assert m["T_traj"] == rows[-1]["t"]


def test_cli_track_path_mismatch_is_input_error(tmp_path):
    assert main(["plan", str(bundled_dir() / "corridor.json"), "--out", str(tmp_path / "p")]) == 0
    assert main(["track", str(bundled_dir() / "open_box.json"), "--path", str(tmp_path / "p" / "path.json"),
                 "--out", str(tmp_path / "t")]) == 1


def test_cli_track_shelf(tmp_path):
    out = tmp_path / "t"
    assert main(["track", str(bundled_dir() / "shelf_replan.json"), "--plan-inline", "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert len(m["replans"]) == 2 and m["collisions"] == 0
    rep = json.loads((out / "replans.json").read_text())["replans"]
    assert len(rep) == 2 and all("m_max" in r for r in rep)
    assert len(json.loads((out / "timings.json").read_text())["replan_t_plan"]) == 2


# --- artifacts ---------------------------------------------------------------------------

def test_artifacts_are_deterministic(tmp_path):
    sc = bundled("corridor")
    a = write_artifact(run_track(sc, seed=2), tmp_path / "a")
    b = write_artifact(run_track(sc, seed=2), tmp_path / "b")
    for name in ("metrics.json", "path.json", "sets.json", "trajectory.csv", "scenario.json", "replans.json"):
        assert sha(a / name) == sha(b / name), name


def test_trajectory_csv_round_trip():
    rows = [{"t": 0.1, "x": 1 / 3, "y": -2e-17, "z": 0.5, "vx": np.float64(0.3), "vy": 0.0, "vz": 1e300,
             "phi": 0.25, "set_id": 4, "status": "ok"},
            {"t": 0.0, "x": 0.0, "y": 0.0, "z": 0.0, "vx": 0.0, "vy": 0.0, "vz": 0.0,
             "phi": 0.0, "set_id": None, "status": "init"}]
    import io
    back = [dict(r) for r in csv.DictReader(io.StringIO(trajectory_csv(rows)))]
    from boundplan.artifacts import _parse_field, TRAJ_FIELDS
    parsed = [{k: _parse_field(k, r[k]) for k in TRAJ_FIELDS} for r in back]
    assert parsed == [{k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.items()} for r in rows]


def test_plot_data_round_trip_and_faces(tmp_path):
    sc = bundled("open_box")
    d = write_artifact(run_track(sc), tmp_path / "a")
    assert main(["plot", str(d)]) == 0
    plot = d / "plot"
    sets = json.loads((plot / "sets.json").read_text())["sets"]
    path_sets = json.loads((d / "sets.json").read_text())["sets"]
    for s, ps in zip(sets, path_sets):
        A, b = np.array(ps["A"]), np.array(ps["b"])
        A = A / np.linalg.norm(A, axis=1)[:, None]
        assert s["faces"]
        for face in s["faces"]:
            V = np.array(face["vertices"])
            assert np.max(np.abs(V @ A[face["row"]] - b[face["row"]])) <= 1e-9
            assert np.max(V @ A.T - b) <= 1e-9
    obstacles = json.loads((plot / "obstacles.json").read_text())["obstacles"]
    assert len(obstacles) == len(sc.obstacles) and all(len(o["faces"]) == 6 for o in obstacles)
    with open(plot / "path.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["phi", "x", "y", "z"]
    path = json.loads((d / "path.json").read_text())
    np.testing.assert_allclose([float(v) for v in rows[-1][1:]], path["via_points"][-1], atol=1e-12)
    traj = read_trajectory_csv(d / "trajectory.csv")
    with open(plot / "trajectory.csv") as fh:
        t_rows = list(csv.reader(fh))[1:]
    assert [[float(v) for v in r] for r in t_rows] == [[r[k] for k in ("t", "x", "y", "z")] for r in traj]
    # deterministic output
    first = {p.name: sha(p) for p in plot.iterdir()}
    emit_plot_data(d)
    assert first == {p.name: sha(p) for p in plot.iterdir()}


def test_plot_data_without_obstacles(tmp_path):
    d = write_artifact(run_plan(parse_scenario(json.dumps(base_scenario()))), tmp_path / "a")
    emit_plot_data(d)
    assert json.loads((d / "plot" / "obstacles.json").read_text()) == {"obstacles": []}


def test_plot_requires_artifact(tmp_path):
    assert main(["plot", str(tmp_path)]) == 1


def test_polytope_faces_cube():
    faces = polytope_faces(ConvexPolytope.box([0, 0, 0], [1, 2, 3]))
    assert len(faces) == 6
    assert all(len(f) == 4 for _, f in faces)


def test_body_faces_flat_body():
    faces = body_faces([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    assert len(faces) == 1 and len(faces[0]) == 4


# --- bench ----------------------------------------------------------------------------------

def test_bench_single_run_is_degenerate(tmp_path):
    f = write(tmp_path, base_scenario(), "one.json")
    out = tmp_path / "bench"
    assert main(["bench", str(tmp_path / "one.json"), "--reps", "1", "--out", str(out)]) == 0
    report = json.loads((out / "bench.json").read_text())["scenarios"][0]
    timings = json.loads((out / "bench_timings.json").read_text())["scenarios"][0]
    for key in ("path_length", "T_traj"):
        assert report[key]["min"] == report[key]["avg"] == report[key]["max"]
    assert timings["t_plan"]["min"] == timings["t_plan"]["avg"] == timings["t_plan"]["max"]
    assert report["failures"] == 0 and report["runs"] == 1


def test_bench_counts_failures(tmp_path):
    write(tmp_path, base_scenario(), "a_ok.json")
    write(tmp_path, tight_corridor(), "b_tight.json")
    out = tmp_path / "bench"
    assert main(["bench", str(tmp_path / "*.json"), "--plan-only", "--seeds", "0", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "bench.json").read_text())["scenarios"]
    assert [r["failures"] for r in rep] == [0, 2]
    assert rep[1]["path_length"] is None


def test_bench_no_match_is_input_error(tmp_path):
    assert main(["bench", str(tmp_path / "*.json")]) == 1


def test_log_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BOUNDPLAN_LOG", "loud")
    assert main(["plan", str(write(tmp_path, base_scenario())), "--out", str(tmp_path / "o")]) == 0
    assert "BOUNDPLAN_LOG" in capsys.readouterr().err
