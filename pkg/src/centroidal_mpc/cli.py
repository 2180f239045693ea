"""Command line front end.

Subcommands:
  run SCENARIO [--out DIR] [--override section.key=value ...]
  check-derivatives SCENARIO [--points N] [--seed S]
  metrics LOG_DIR

Exit codes: 0 success, 1 runtime failure, 2 validation error, 3 completed
with degraded solver steps.  CENTROIDAL_MPC_LOG=error|info|debug controls
verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .controller import cold_start, layout_for
from .plan import horizon_schedule, nominal_com_trajectory
from .scenario import ScenarioError, apply_overrides, parse_scenario
from .sim import SimulationDiverged, export_csv, simulate, write_manifest
from .solver import check_derivatives
from .transcription import build_nlp

log = logging.getLogger("centroidal_mpc")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("CENTROIDAL_MPC_LOG", "error").lower()
    if level not in _LOG_LEVELS:
        print(f"warning: unknown CENTROIDAL_MPC_LOG level {level!r}; using error",
              file=sys.stderr)
        level = "error"
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(levelname)s %(message)s")


def _load_config(path: str, overrides):
    text = Path(path).read_text()
    if overrides:
        text = apply_overrides(text, overrides)
    return parse_scenario(text, name=Path(path).stem)


def _cmd_run(args) -> int:
    config = _load_config(args.scenario, args.override)
    traj, metrics = simulate(config)
    out_dir = args.out or config.output_dir or f"{config.name}_out"
    files = export_csv(traj, out_dir)
    manifest = write_manifest(traj, metrics, out_dir)
    print(f"wrote {len(files)} CSV files and {manifest.name} to {out_dir}")
    print(json.dumps(metrics.as_dict(), indent=2, sort_keys=True))
    if traj.degraded.any():
        print(f"warning: {int(traj.degraded.sum())} degraded solver steps", file=sys.stderr)
        return 3
    return 0


def _cmd_check_derivatives(args) -> int:
    config = _load_config(args.scenario, args.override)
    plan, params, options = config.plan, config.params, config.mpc
    layout = layout_for(plan, options)
    schedule = horizon_schedule(plan, 0.0, options.horizon_knots, options.period,
                                clamp_to_duration=True)
    spline = nominal_com_trajectory(plan, params)
    samples = spline.sample(options.period * np.arange(options.horizon_knots + 1))
    measured = np.array([c.nominal_position for c in plan.contacts])
    from .model import CentroidalState

    state = CentroidalState(spline.position(0.0), np.zeros(3), np.zeros(3))
    problem = build_nlp(
        plan, state, measured, schedule, samples, options.weights, options.pyramid(),
        options.box, options.horizon_knots, options.period, params,
    )
    base = cold_start(plan, state, layout, options, params)
    rng = np.random.RandomState(args.seed)
    worst = None
    for _ in range(args.points):
        point = base + rng.uniform(-0.5, 0.5, size=layout.size)
        report = check_derivatives(problem, point, fd_step=1e-6)
        if worst is None or report.max_relative_error > worst.max_relative_error:
            worst = report
    print(f"checked {args.points} random points: {worst}")
    return 0 if worst.max_relative_error < 1e-5 else 1


def _cmd_metrics(args) -> int:
    manifest = Path(args.log_dir) / "run_manifest.json"
    if not manifest.exists():
        print(f"no run_manifest.json under {args.log_dir}", file=sys.stderr)
        return 2
    payload = json.loads(manifest.read_text())
    print(json.dumps(payload["metrics"], indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(prog="centroidal-mpc",
                                     description="Centroidal MPC scenario runner")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and export CSV logs")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
    p_run.set_defaults(func=_cmd_run)

    p_chk = sub.add_parser("check-derivatives",
                           help="finite-difference audit of the scenario NLP")
    p_chk.add_argument("scenario")
    p_chk.add_argument("--points", type=int, default=10)
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
    p_chk.set_defaults(func=_cmd_check_derivatives)

    p_met = sub.add_parser("metrics", help="print the metrics of a finished run")
    p_met.add_argument("log_dir")
    p_met.set_defaults(func=_cmd_metrics)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationDiverged as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
