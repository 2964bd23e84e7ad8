"""Command line entry point: ``boundplan plan|track|bench|plot``.

Exit codes: 0 success, 1 input error, 2 planner failure, 3 tracking violation.
``BOUNDPLAN_LOG`` (off|info|debug) sets diagnostic verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .artifacts import bench, emit_plot_data, expand, format_table, load_path, run_plan, run_track, write_artifact
from .scenario import ScenarioError, bundled_dir, canonical_json, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_PLAN, EXIT_TRACK = 0, 1, 2, 3

_LEVELS = {"off": logging.CRITICAL + 1, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("BOUNDPLAN_LOG", "off").strip().lower()
    if level not in _LEVELS:
        print(f"warning: BOUNDPLAN_LOG={level!r} not one of off|info|debug, using off", file=sys.stderr)
        level = "off"
    logging.basicConfig(level=_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def _parser():
    ap = argparse.ArgumentParser(prog="boundplan", description="Convex-set path planning and tunnel tracking.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("plan", help="plan a reference path")
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="artifact directory (default: ./out/<scenario name>)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-graph", action="store_true")
    p.add_argument("--position-only", action="store_true")

    t = sub.add_parser("track", help="plan (or load a path) and run the closed-loop tracker")
    t.add_argument("scenario")
    t.add_argument("--path", default=None, help="path.json from a previous plan run")
    t.add_argument("--plan-inline", action="store_true", help="plan first (the default without --path)")
    t.add_argument("--out", default=None)
    t.add_argument("--seed", type=int, default=None)

    b = sub.add_parser("bench", help="repeat runs over scenario files and aggregate")
    b.add_argument("glob", help="scenario glob, or 'bundled' for the shipped suite")
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--seeds", type=int, nargs="*", default=None)
    b.add_argument("--plan-only", action="store_true")
    b.add_argument("--out", default=None)

    pl = sub.add_parser("plot", help="write plot data for an artifact directory")
    pl.add_argument("artifact")
    return ap


def _summary(out, d):
    m = out.metrics
    print(f"{m['scenario']}: {m['status']}" + (f" ({m['error']})" if m.get("error") else ""))
    if out.path is not None:
        print(f"  sets {m['set_ids']}  path length {m['path_length']:.4f} m  "
              f"orientation {m['orientation_length_deg']:.2f} deg  t_plan {out.timings.get('t_plan', 0):.3f} s")
    if "T_traj" in m:
        print(f"  T_traj {m['T_traj']:.2f} s  collisions {m['collisions']}  degraded {m['degraded']}  "
              f"replans {len(m['replans'])}  final error {m['final_error']:.2e} m")
    print(f"  artifacts in {d}")


def _cmd_plan(args):
    sc = load_scenario(args.scenario)
    out = run_plan(sc, args.seed, True if args.position_only else None)
    d = write_artifact(out, args.out or Path("out") / sc.name, dump_graph=args.dump_graph)
    _summary(out, d)
    return out.exit_code


def _cmd_track(args):
    sc = load_scenario(args.scenario)
    path = None
    if args.path:
        try:
            path = load_path(args.path)
        except (OSError, ValueError, KeyError) as ex:
            raise ScenarioError(args.path, f"cannot read path artifact: {ex}") from None
        if max(abs(a - b) for a, b in zip(path.start, sc.start.position)) > 1e-9:
            raise ScenarioError(args.path, "path does not start at the scenario start position")
    out = run_track(sc, path, args.seed)
    d = write_artifact(out, args.out or Path("out") / sc.name)
    _summary(out, d)
    if out.exit_code == EXIT_TRACK:
        print(f"tracking violation at step {out.metrics.get('violation_step')}", file=sys.stderr)
    return out.exit_code


def _cmd_bench(args):
    pattern = str(bundled_dir() / "*.json") if args.glob == "bundled" else args.glob
    files = expand(pattern)
    if not files:
        raise ScenarioError(args.glob, "no scenario file matched")
    report, timings = bench(files, args.reps, args.seeds, track=not args.plan_only)
    out = Path(args.out or "out/bench")
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(canonical_json(report))
    (out / "bench_timings.json").write_text(canonical_json(timings))
    print(format_table(report, timings))
    print(f"report in {out}")
    return EXIT_OK


def _cmd_plot(args):
    d = Path(args.artifact)
    if not (d / "scenario.json").exists():
        raise ScenarioError(str(d), "not an artifact directory (scenario.json missing)")
    out = emit_plot_data(d)
    print(f"plot data in {out}")
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    handler = {"plan": _cmd_plan, "track": _cmd_track, "bench": _cmd_bench, "plot": _cmd_plot}[args.cmd]
    try:
        return handler(args)
    except ScenarioError as ex:
        print(f"input error: {ex}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "EXIT_OK", "EXIT_INPUT", "EXIT_PLAN", "EXIT_TRACK"]
