"""Command-line interface: ``xbarsim {run,scenarios,sweep,map,margin}``.

Data goes to files under ``--out`` (or to stdout when ``--out`` is omitted);
progress and timing go to stderr.  Exit status: 0 success, 1 usage or
configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, emit_map, emit_table, parse_config
from .metrics import read_metrics
from .model import ConfigError, PatternKind, StatePattern, build_state_pattern
from .protocol import (MapCase, SweepAxis, SweepRow, SweepSpec, current_map_solve, map_case_for,
                       run_protocol, run_sweep, terminal_config_for, worst_case_reads)
from .metrics import sense_margin
from .solver import SolverError, solve_nonlinear

logger = logging.getLogger("xbarsim")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _default_jobs() -> int:
    raw = os.environ.get("XBARSIM_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xbarsim", description="DC read simulator for 1D1R crossbar arrays")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, jobs=False):
        p.add_argument("--config", type=Path, help="JSON run configuration (built-in defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory (stdout if omitted)")
        if jobs:
            p.add_argument("--jobs", type=int, default=_default_jobs(),
                           help="worker processes (default: $XBARSIM_JOBS or 1)")

    p = sub.add_parser("run", help="single read solve")
    common(p)
    p.add_argument("--select", default="1,1", help="selected cell as i,j (1-based)")
    p.add_argument("--cells", choices=[k.value for k in PatternKind], default="random",
                   help="state of the unselected cells")

    p = sub.add_parser("scenarios", help="all twelve protocol scenarios")
    common(p, jobs=True)

    p = sub.add_parser("sweep", help="sweep one parameter axis")
    common(p, jobs=True)
    p.add_argument("--axis", required=True, choices=[a.value for a in SweepAxis])
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--log", action="store_true", help="log-spaced points")
    p.add_argument("--scenarios", default="8,9", help="comma-separated scenario indices")

    p = sub.add_parser("map", help="cell-current map of a random-state array")
    common(p)
    p.add_argument("--bias", choices=["single", "dual"], default="single")
    p.add_argument("--ground", choices=["single", "dual"], default="single")

    p = sub.add_parser("margin", help="worst-case sense margin (scenarios 8 and 9)")
    common(p)
    return parser


def _load(args) -> RunConfig:
    return parse_config(args.config) if args.config else RunConfig()


def _out(args, name):
    return None if args.out is None else args.out / name


def _parse_ints(text, what):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _check_rows(rows):
    # A failed solve anywhere means no table is written at all.
    failed = [r for r in rows if r.error]
    for r in failed:
        logger.error("%s", r.error)
    if failed:
        raise SolverError(f"{len(failed)} of {len(rows)} rows failed")


def _cmd_run(args, cfg: RunConfig):
    sel = _parse_ints(args.select, "--select")
    if len(sel) != 2:
        raise ConfigError(f"--select needs i,j, got {args.select!r}")
    i, j = sel[0] - 1, sel[1] - 1
    a = cfg.array
    if not (0 <= i < a.m and 0 <= j < a.n):
        raise ConfigError(f"--select {args.select} outside {a.m}x{a.n} array")
    cells = build_state_pattern(StatePattern(args.cells, a.r_low, a.r_high, cfg.seed), a.m, a.n)
    array = cfg.array_config(cells)
    term = terminal_config_for(cfg.scheme, (i, j), array.shape, cfg.terminals)
    result = solve_nonlinear(array, term, cfg.solver)
    met = read_metrics(result, (i, j), term)
    row = SweepRow("run", 0.0, "scenario", None, met.apparent_resistance, met.v_sense, float("nan"),
                   met.i_select, met.i_leak, result.iterations, result.kcl_residual, result.converged)
    emit_table([row], _out(args, "read.csv"))
    if args.out is not None:
        emit_map(result.i_cell, args.out / "i_cell.csv", "i_cell_a")
        emit_map(result.v_wl, args.out / "v_wl.csv", "v_wl_v")
        emit_map(result.v_bl, args.out / "v_bl.csv", "v_bl_v")
        emit_map(met.power_map, args.out / "power.csv", "power_w")


def _cmd_scenarios(args, cfg: RunConfig):
    a = cfg.array
    rows = run_protocol(cfg.array_config(), cfg.scheme, cfg.solver, r_low=a.r_low, r_high=a.r_high,
                        sense=cfg.terminals, seed=cfg.seed, jobs=args.jobs)
    _check_rows(rows)
    emit_table(rows, _out(args, "scenarios.csv"))
    return rows


def _cmd_sweep(args, cfg: RunConfig):
    if args.points < 1:
        raise ConfigError(f"--points must be >= 1, got {args.points}")
    if args.log:
        if args.start <= 0 or args.stop <= 0:
            raise ConfigError("--log needs positive --from and --to")
        points = np.logspace(np.log10(args.start), np.log10(args.stop), args.points)
    else:
        points = np.linspace(args.start, args.stop, args.points)
    if args.axis == SweepAxis.ARRAY_SIZE.value:
        points = np.round(points)
    a = cfg.array
    spec = SweepSpec(args.axis, tuple(points), cfg.array_config(), cfg.scheme, cfg.solver,
                     tuple(_parse_ints(args.scenarios, "--scenarios")), a.r_low, a.r_high, cfg.terminals, cfg.seed)
    rows = run_sweep(spec, jobs=args.jobs)
    _check_rows(rows)
    emit_table(rows, _out(args, f"sweep_{args.axis}.csv"))
    return rows


def _cmd_map(args, cfg: RunConfig):
    a = cfg.array
    cells = build_state_pattern(StatePattern(PatternKind.RANDOM, a.r_low, a.r_high, cfg.seed), a.m, a.n)
    case = map_case_for(args.bias == "dual", args.ground == "dual")
    result = current_map_solve(case, cfg.array_config(cells), cfg.solver, read_voltage=cfg.scheme.read_voltage,
                               sense_r=cfg.terminals.r_sens_wl1, open_r=cfg.terminals.r_sens_wl2)
    emit_map(result.i_cell, _out(args, f"map_{MapCase(case).value}.csv"), "i_cell_a")


def _cmd_margin(args, cfg: RunConfig):
    a = cfg.array
    low, high = worst_case_reads(cfg.array_config(), cfg.scheme, cfg.solver, r_low=a.r_low, r_high=a.r_high,
                                 sense=cfg.terminals, seed=cfg.seed)
    margin = sense_margin(low.result, high.result, low.selected, low.terminals, high.terminals)
    rows = []
    for out in (low, high):
        met = out.metrics
        rows.append(SweepRow("margin", 0.0, "scenario", out.spec.index, met.apparent_resistance, met.v_sense,
                             float("nan"), met.i_select, met.i_leak, out.result.iterations,
                             out.result.kcl_residual, True))
    rows.append(SweepRow("margin", 0.0, "margin", None, sense_margin_pct=margin,
                         iterations=low.result.iterations + high.result.iterations,
                         kcl_residual_a=max(low.result.kcl_residual, high.result.kcl_residual), converged=True))
    emit_table(rows, _out(args, "margin.csv"))
    return margin


_COMMANDS = {"run": _cmd_run, "scenarios": _cmd_scenarios, "sweep": _cmd_sweep, "map": _cmd_map,
             "margin": _cmd_margin}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        cfg = _load(args)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except SolverError as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    logger.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
