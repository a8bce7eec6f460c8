"""``huauv`` command line: run missions, validate scenarios, generate random ones.

Exit status is 0 on success, 1 when a mission fails and 2 for usage, parse
or I/O errors.

Files written by ``run`` into the output directory:

``trajectory.csv``
    one row per integration step:
    ``t,x,y,z,phi,theta,psi,vx,vy,vz,wx,wy,wz,x_ref,y_ref,z_ref,psi_ref``
``plot_executed.csv`` / ``plot_planned.csv``
    ``t,x,y,z,phi,theta,psi,x_ref,y_ref,z_ref,psi_ref`` for the executed
    states and for the states the planner predicted for the same periods
``events.csv``
    ``t,event`` for every tick event
``transitions.csv``
    ``enter,exit,from,to`` per completed crossing; absent when there are none
``tree.json``
    the final tree; node trajectories are included with ``--dump-tree``
``metrics.yaml``
    mission summary
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from .executor import MissionLog, run_mission
from .scenario import Scenario, ScenarioError, dump_scenario, load_scenario, random_scenario
from .world import ScenarioGenerationError, trajectory_free

TRAJECTORY_COLUMNS = (
    "t", "x", "y", "z", "phi", "theta", "psi", "vx", "vy", "vz", "wx", "wy", "wz",
    "x_ref", "y_ref", "z_ref", "psi_ref",
)
PLOT_COLUMNS = ("t", "x", "y", "z", "phi", "theta", "psi", "x_ref", "y_ref", "z_ref", "psi_ref")
FLOAT_FORMAT = "%.10g"

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _write_table(path: Path, columns, data: np.ndarray) -> None:
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(columns), comments="")


def emit_trajectory(log: MissionLog, out: Path) -> Path:
    path = out / "trajectory.csv"
    _write_table(path, TRAJECTORY_COLUMNS, np.column_stack([log.times, log.states, log.references]))
    return path


def emit_plot_data(log: MissionLog, out: Path) -> list[Path]:
    """Position and attitude series, executed and predicted, plus transition markers."""
    if log.times.size == 0:
        raise ValueError("log is empty")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for label, states in (("executed", log.states), ("planned", log.planned)):
        path = out / f"plot_{label}.csv"
        _write_table(path, PLOT_COLUMNS, np.column_stack([log.times, states[:, :6], log.references]))
        written.append(path)
    if log.transitions:
        path = out / "transitions.csv"
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("enter", "exit", "from", "to"), lineterminator="\n")
            w.writeheader()
            for row in log.transitions:
                w.writerow({**row, "enter": FLOAT_FORMAT % row["enter"], "exit": FLOAT_FORMAT % row["exit"]})
        written.append(path)
    return written


def metrics(log: MissionLog, scenario: Scenario) -> dict:
    s = asdict(log.summary)
    s["collision_free"] = bool(trajectory_free(log.states, scenario.world.with_all_known()))
    s["final_position"] = [float(v) for v in log.states[-1, :3]]
    s["goal_distance"] = float(np.linalg.norm(log.states[-1, :3] - scenario.goal.position))
    s["scenario"] = scenario.name
    s["seed"] = scenario.seed
    return {k: (float(v) if isinstance(v, float) else v) for k, v in s.items()}


def run_command(scenario_path, out_dir, seed: int | None = None, dump_tree: bool = False, perturb: bool = False) -> int:
    scenario = load_scenario(scenario_path)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    if perturb:
        scenario = replace(scenario, executor=replace(scenario.executor, perturb=True))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    log = run_mission(scenario)
    emit_trajectory(log, out)
    emit_plot_data(log, out)
    with (out / "events.csv").open("w", newline="") as fh:
        fh.write("t,event\n")
        for t, e in log.events():
            fh.write(f"{FLOAT_FORMAT % t},{e}\n")
    (out / "tree.json").write_text(json.dumps(log.tree.dump(trajectories=dump_tree), indent=1) + "\n")
    report = metrics(log, scenario)
    (out / "metrics.yaml").write_text(yaml.safe_dump(report, sort_keys=False))
    print(
        f"{scenario.name}: {'success' if report['success'] else 'FAILED'} "
        f"t={report['elapsed_time']:.0f}s transitions={report['transition_count']} "
        f"goal_distance={report['goal_distance']:.2f}m -> {out}"
    )
    return EXIT_OK if report["success"] else EXIT_FAILED


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="huauv", description="Hybrid aerial-underwater vehicle mission simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a mission and write its logs")
    run.add_argument("scenario", help="scenario file, or a packaged name (exp1, exp2)")
    run.add_argument("--seed", type=int, help="override the planner seed")
    run.add_argument("--out", default="out", help="output directory (default: ./out)")
    run.add_argument("--dump-tree", action="store_true", help="include node trajectories in tree.json")
    run.add_argument("--perturb", action="store_true", help="fly the vehicle with perturbed mass and drag")

    val = sub.add_parser("validate", help="parse and check a scenario file")
    val.add_argument("scenario")

    gen = sub.add_parser("gen-scenario", help="write a random scenario")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=20, help="number of obstacles")
    gen.add_argument("--no-crossing", action="store_true", help="keep start and goal in the air")
    gen.add_argument("--out", help="file to write (default: stdout)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return run_command(args.scenario, args.out, args.seed, args.dump_tree, args.perturb)
        if args.command == "validate":
            s = load_scenario(args.scenario)
            n = len(s.world.obstacles_all)
            print(f"{s.name}: ok ({n} obstacles, start {list(s.start_spec.position)}, goal {s.goal.position.tolist()})")
            return EXIT_OK
        if args.count < 0:
            raise ScenarioError("must be non-negative", "--count")
        text = dump_scenario(random_scenario(args.seed, args.count, crossing=not args.no_crossing))
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except (ScenarioError, ScenarioGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"error:{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
