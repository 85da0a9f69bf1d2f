"""Command-line entry point.

    safekino run SCENARIO.json [--filter on|off|both] [--seed N] [--out DIR]
                               [--horizon N] [--disturbance B]
    safekino compare DIR_A DIR_B [--out DIR]
    safekino export-series RUN_DIR SERIES [--out FILE]

Exit codes: 0 success, 1 bad input, 2 constraint violations, 3 mission aborted
or goal not reached.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .config import ConfigError, ScenarioConfig
from .pipeline import MissionResult, build_components, compare_summaries, run_mission, summarize
from .safety_filter import TerminalSetError

log = logging.getLogger("safekino")

EXIT_OK, EXIT_INPUT, EXIT_VIOLATION, EXIT_ABORT = 0, 1, 2, 3

CHART_NAMES = ["x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r"]
RUN_FILES = ("scenario.json", "summary.json", "trajectory.csv", "interventions.csv")
SERIES = {
    "angles": ("t", ["roll", "pitch", "yaw"], "state"),
    "velocity_xy": ("t", ["vx", "vy"], "state"),
    "velocity_xz": ("t", ["vx", "vz"], "state"),
    "position_3d": ("t", ["x", "y", "z"], "workspace"),
    "position_topview": ("t", ["x", "y"], "workspace"),
}


def _num(v: float) -> str:
    return repr(float(v))


def write_run(out_dir: Path, cfg: ScenarioConfig, result: MissionResult,
              terminal_level: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "scenario.json").write_text(config_mod.dumps(cfg), encoding="utf-8")
    with open(out_dir / "trajectory.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "t", *CHART_NAMES,
                         *(f"u_des_{i}" for i in range(4)), *(f"u_safe_{i}" for i in range(4)),
                         "intervened", "fallback", "window"])
        for rec in result.records:
            writer.writerow([rec.step, _num(rec.time), *map(_num, rec.chart),
                             *map(_num, rec.u_des), *map(_num, rec.u_safe),
                             int(rec.intervened), int(rec.fallback), rec.window])
    with open(out_dir / "interventions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", *(f"u_des_{i}" for i in range(4)),
                         *(f"u_safe_{i}" for i in range(4))])
        for k, u_des, u_safe in result.interventions:
            writer.writerow([k, *map(_num, u_des), *map(_num, u_safe)])
    summary = summarize(result)
    summary["terminal_level"] = terminal_level
    summary["fallback_steps"] = list(result.fallback_steps)
    summary["violations"] = [{"step": v.step, "kind": v.kind, "detail": v.detail}
                             for v in result.constraint_violations]
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")


def _exit_code(result: MissionResult) -> int:
    if result.constraint_violations:
        return EXIT_VIOLATION
    if result.aborted or not result.reached_goal:
        return EXIT_ABORT
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.horizon is not None:
            cfg = config_mod.replace_mission(cfg, horizon=args.horizon)
        if args.disturbance is not None:
            cfg = config_mod.replace_mission(cfg, disturbance_bound=(args.disturbance,) * 12)
        components = build_components(cfg)
    except (ConfigError, ValueError, TerminalSetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out or cfg.output_dir)
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.filter]
    codes = []
    for enabled in modes:
        started = time.perf_counter()
        result = run_mission(cfg.environment, components, enabled)
        run_dir = out if len(modes) == 1 else out / ("filter_on" if enabled else "filter_off")
        write_run(run_dir, cfg, result, components.terminal.level)
        code = _exit_code(result)
        codes.append(code)
        s = summarize(result)
        print(f"filter {'on' if enabled else 'off'}: reached_goal={s['reached_goal']} "
              f"violations={s['violation_count']} interventions={s['intervention_count']} "
              f"fallbacks={s['fallback_count']} goal_error={s['goal_error']:.4f} "
              f"({time.perf_counter() - started:.1f} s) -> {run_dir}")
    return max(codes)


def _load_run(run_dir: Path) -> tuple[dict, dict]:
    missing = [name for name in RUN_FILES if not (run_dir / name).is_file()]
    if missing:
        raise FileNotFoundError(f"{run_dir}: missing {', '.join(missing)}")
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    scenario = json.loads((run_dir / "scenario.json").read_text(encoding="utf-8"))
    return summary, scenario


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        sum_a, scen_a = _load_run(Path(args.dir_a))
        sum_b, scen_b = _load_run(Path(args.dir_b))
        if scen_a != scen_b:
            raise ValueError("runs come from different scenario configurations")
        comparison = compare_summaries(sum_a, sum_b)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out) if args.out else Path(args.dir_b)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(comparison, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    print(f"{'metric':<28}{'a':>14}{'b':>14}{'b - a':>14}")
    for key, delta in comparison["delta"].items():
        print(f"{key:<28}{sum_a[key]:>14.6g}{sum_b[key]:>14.6g}{delta:>14.6g}")
    return EXIT_OK


def cmd_export_series(args: argparse.Namespace) -> int:
    if args.series not in SERIES:
        print(f"error: unknown series {args.series!r}; valid: {', '.join(SERIES)}",
              file=sys.stderr)
        return EXIT_INPUT
    run_dir = Path(args.run_dir)
    try:
        _, scenario = _load_run(run_dir)
        cfg = config_mod.config_from_dict(scenario)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    time_col, columns, bound_kind = SERIES[args.series]
    if bound_kind == "state":
        lower = dict(zip(CHART_NAMES, cfg.constraints.state_lower))
        upper = dict(zip(CHART_NAMES, cfg.constraints.state_upper))
    else:
        env = cfg.environment
        lower = dict(zip("xyz", env.workspace_min))
        upper = dict(zip("xyz", env.workspace_max))
    bound_cols = [f"{c}_{side}" for c in columns for side in ("min", "max")]
    bound_vals = [_num(b) for c in columns for b in (lower[c], upper[c])]
    out = Path(args.out) if args.out else run_dir / f"{args.series}.csv"
    with open(run_dir / "trajectory.csv", newline="", encoding="utf-8") as src, \
            open(out, "w", newline="", encoding="utf-8") as dst:
        reader = csv.DictReader(src)
        writer = csv.writer(dst, lineterminator="\n")
        writer.writerow([time_col, *columns, *bound_cols])
        for row in reader:
            writer.writerow([row["t"], *(row[c] for c in columns), *bound_vals])
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safekino", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a mission from a scenario file")
    run.add_argument("config")
    run.add_argument("--filter", choices=("on", "off", "both"), default="on")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--horizon", type=int)
    run.add_argument("--disturbance", type=float)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare two run directories")
    cmp_.add_argument("dir_a")
    cmp_.add_argument("dir_b")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    exp = sub.add_parser("export-series", help="write a plot-ready CSV series")
    exp.add_argument("run_dir")
    exp.add_argument("series")
    exp.add_argument("--out")
    exp.set_defaults(func=cmd_export_series)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
