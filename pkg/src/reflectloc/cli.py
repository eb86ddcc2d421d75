"""Command-line driver.

    reflectloc run SCENARIO [--seed N] [--particles W] [--max-order K] [--noise-deg D]
                            [--out-dir DIR] [--dump-paths] [--dump-particles] [--set key=value ...]
    reflectloc sweep-order SCENARIO --orders 0 1 2 3 4 [--seeds N] [...same flags]
    reflectloc dump-map (SCENARIO | --map FILE) [-o OUT]

SCENARIO is a YAML file or the name of a bundled scenario. Exit codes:
0 success, 2 bad input, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .forward_sim import Scenario, ScenarioError
from .localizer import (
    ESTIMATE_CSV_HEADER,
    LocalizerConfig,
    PARTICLE_CSV_HEADER,
    estimate_row,
)
from .occupancy_map import GridBoundsError, read_map, write_map
from .pipeline import (
    FrameHooks,
    RunReport,
    make_configs,
    run_scenario,
    write_report_csv,
    write_summary_json,
)
from .ray_tracer import (
    PATH_CSV_HEADER,
    ConfigurationError,
    OrientationError,
    TraceConfig,
    write_paths_csv,
)
from .scenario_file import bundled_scenarios, load_scenario, resolve_scenario

EXIT_OK, EXIT_BAD_INPUT, EXIT_INVARIANT = 0, 2, 3

_TRACE_FIELDS = {f.name for f in fields(TraceConfig)}
_LOC_FIELDS = {f.name for f in fields(LocalizerConfig)}


class BadInput(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InvariantViolation(Exception):
    pass


def parse_overrides(items: Sequence[str]) -> tuple[dict, dict]:
    """``key=value`` pairs routed to TraceConfig or LocalizerConfig by field name.

    Values are parsed as YAML scalars/sequences; ``trace.`` or ``localizer.``
    prefixes are accepted.
    """
    trace, loc = {}, {}
    for item in items:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise BadInput("--set", f"expected key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise BadInput(key, f"cannot parse value {raw!r}") from None
        if isinstance(value, list):
            value = tuple(value)
        scope, _, name = key.rpartition(".")
        if scope not in ("", "trace", "localizer"):
            raise BadInput(key, "prefix must be 'trace.' or 'localizer.'")
        if name in _TRACE_FIELDS and scope in ("", "trace"):
            trace[name] = value
        elif name in _LOC_FIELDS and scope in ("", "localizer"):
            loc[name] = value
        else:
            raise BadInput(key, "not a TraceConfig or LocalizerConfig field")
    return trace, loc


def _load(ref: str) -> Scenario:
    path = resolve_scenario(ref)
    if not path.exists():
        known = ", ".join(bundled_scenarios())
        raise ScenarioError("<file>", f"no such file or bundled scenario {ref!r} (bundled: {known})")
    return load_scenario(path)


def _prepare(args) -> tuple[Scenario, TraceConfig, LocalizerConfig]:
    sc = _load(args.scenario)
    if args.seed is not None:
        sc.rng_seed = args.seed
    if args.noise_deg is not None:
        if args.noise_deg < 0:
            raise BadInput("--noise-deg", "must be >= 0")
        sc.noise_angle_std = math.radians(args.noise_deg)
    trace, loc = parse_overrides(args.set or [])
    if args.max_order is not None:
        trace["max_order"] = args.max_order
    if args.particles is not None:
        loc["particle_count"] = args.particles
    if args.seed is not None and "rng_seed" not in loc:
        loc["rng_seed"] = args.seed
    try:
        tc, lc = make_configs(sc, trace, loc)
    except (ValueError, TypeError) as e:
        raise BadInput("--set", str(e)) from None
    return sc, tc, lc


def check_report(report: RunReport, loc_cfg: LocalizerConfig) -> None:
    for r in report.records:
        e = r.estimate
        if not np.all(np.isfinite(e.mean)):
            raise InvariantViolation(f"frame {r.frame}: non-finite estimate")
        if e.iterations_used > 0 and e.converged != (e.gv < loc_cfg.sigma_c):
            raise InvariantViolation(f"frame {r.frame}: converged flag disagrees with gv")
        if not np.allclose(e.covariance, e.covariance.T, atol=1e-9):
            raise InvariantViolation(f"frame {r.frame}: covariance not symmetric")
        if r.signal_count == 0 and e.iterations_used != 0:
            raise InvariantViolation(f"frame {r.frame}: iterated without signals")


def execute(sc: Scenario, tc: TraceConfig, lc: LocalizerConfig, out_dir: Optional[Path],
            dump_paths: bool = False, dump_particles: bool = False) -> RunReport:
    hooks = FrameHooks(paths=[] if dump_paths else None,
                       particles=[] if dump_particles else None)
    report = run_scenario(sc, tc, lc, hooks)
    check_report(report, lc)
    if out_dir is None:
        return report
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as f:
        write_report_csv(report, f)
    with open(out_dir / "estimates.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ESTIMATE_CSV_HEADER)
        for r in report.records:
            w.writerow(estimate_row(r.frame, r.estimate))
    with open(out_dir / "summary.json", "w") as f:
        write_summary_json(report, f)
    if dump_paths:
        with open(out_dir / "paths.csv", "w", newline="") as f:
            f.write(",".join(["frame"] + PATH_CSV_HEADER) + "\n")
            for frame, paths in hooks.paths:
                write_paths_csv(paths, f, frame=frame, header=False)
    if dump_particles:
        with open(out_dir / "particles.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["frame"] + PARTICLE_CSV_HEADER)
            for frame, sets in hooks.particles:
                for ps in sets:
                    for i, (p, wt) in enumerate(zip(ps.positions, ps.weights)):
                        w.writerow([frame, ps.iteration, i, f"{p[0]:.9g}", f"{p[1]:.9g}",
                                    f"{p[2]:.9g}", f"{wt:.9g}"])
    return report


def cmd_run(args) -> int:
    sc, tc, lc = _prepare(args)
    report = execute(sc, tc, lc, Path(args.out_dir), args.dump_paths, args.dump_particles)
    s = report.summary
    print(f"{sc.name}: {s['scored_frames']}/{s['frames']} frames with signals, "
          f"mean error {s['mean_error_m']:.3f} m, convergence {s['convergence_rate']:.2f}")
    return EXIT_OK


SWEEP_HEADER = ["order", "mean_error_m", "std_error_m", "convergence_rate"]


def sweep_order(sc: Scenario, tc: TraceConfig, lc: LocalizerConfig, orders: Sequence[int],
                seeds: int = 1) -> list[dict]:
    """One row per order; frames from ``seeds`` consecutive scenario seeds are pooled."""
    rows = []
    for k in orders:
        errs, conv = [], []
        for i in range(seeds):
            s = replace(sc, rng_seed=sc.rng_seed + i)
            rep = run_scenario(s, replace(tc, max_order=k), replace(lc, rng_seed=lc.rng_seed + i))
            check_report(rep, lc)
            for r in rep.scored():
                errs.append(r.error_m)
                conv.append(r.estimate.converged)
        e = np.array(errs)
        rows.append({
            "order": k,
            "mean_error_m": float(e.mean()) if len(e) else math.nan,
            "std_error_m": float(e.std()) if len(e) else math.nan,
            "convergence_rate": float(np.mean(conv)) if conv else 0.0,
        })
    return rows


def cmd_sweep_order(args) -> int:
    if not args.orders or any(k < 0 for k in args.orders):
        raise BadInput("--orders", "need one or more orders >= 0")
    if args.seeds < 1:
        raise BadInput("--seeds", "must be >= 1")
    sc, tc, lc = _prepare(args)
    rows = sweep_order(sc, tc, lc, args.orders, args.seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r["order"], f"{r['mean_error_m']:.9g}", f"{r['std_error_m']:.9g}",
                        f"{r['convergence_rate']:.9g}"])
    for r in rows:
        print(f"order {r['order']}: mean {r['mean_error_m']:.3f} m, std {r['std_error_m']:.3f} m, "
              f"convergence {r['convergence_rate']:.2f}")
    return EXIT_OK


def cmd_dump_map(args) -> int:
    if (args.scenario is None) == (args.map is None):
        raise BadInput("scenario", "give either a scenario or --map")
    if args.map is not None:
        try:
            grid = read_map(args.map)
        except OSError as e:
            raise BadInput("--map", f"cannot read {args.map}: {e.strerror}") from None
        except ValueError as e:
            raise BadInput("--map", str(e)) from None
    else:
        grid = _load(args.scenario).build_grid()
    if args.output in (None, "-"):
        write_map(grid, sys.stdout)
    else:
        write_map(grid, args.output)
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario YAML file or bundled scenario name")
    p.add_argument("--seed", type=int, help="scenario and localizer seed")
    p.add_argument("--particles", type=int, help="particle count")
    p.add_argument("--max-order", type=int, help="maximum traced reflection order")
    p.add_argument("--noise-deg", type=float, help="direction noise std in degrees")
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any TraceConfig/LocalizerConfig field; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reflectloc", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate, trace and localize every frame")
    _common(p)
    p.add_argument("--dump-paths", action="store_true", help="write paths.csv")
    p.add_argument("--dump-particles", action="store_true", help="write particles.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-order", help="error statistics per maximum reflection order")
    _common(p)
    p.add_argument("--orders", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--seeds", type=int, default=1, help="consecutive seeds pooled per order")
    p.set_defaults(func=cmd_sweep_order)

    p = sub.add_parser("dump-map", help="write the occupancy map of a scenario or map file")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--map", help="existing map file to load and rewrite")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.set_defaults(func=cmd_dump_map)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, BadInput) as e:
        print(f"reflectloc: bad input in {e.field}: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ConfigurationError as e:
        print(f"reflectloc: bad configuration: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (InvariantViolation, OrientationError, GridBoundsError) as e:
        print(f"reflectloc: internal invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
