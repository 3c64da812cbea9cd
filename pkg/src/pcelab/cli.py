"""Command-line entry point.

Subcommands:
  solve      solve a scenario config and export the price coefficients
  simulate   solve a scenario config and export simulated paths
  limit      run a refinement-family convergence study from a limit config
  verify     run the full acceptance battery

Exit codes: 0 success, 1 runtime failure, 2 parse error, 3 validation
failure.  All artifacts are CSV files written under --out.  The environment
variable PCE_LAB_THREADS caps the worker count advertised to numerical
backends (the orchestration itself is single-process).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys

from .engine import coefficient_rows, solve_pce
from .errors import InvalidSpec, PCELabError
from .limits import (
    LimitSpec,
    export_study_csv,
    limit_study,
    power_limit_spec,
    reference_limit_spec,
)
from .market import load_scenario, validate_scenario
from .simulate import SimConfig, export_csv, simulate
from .verify import run_all

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcelab",
        description="Numerical lab for multi-release trading equilibria.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (("solve", True), ("simulate", True),
                               ("limit", True), ("verify", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config,
                       help="scenario or study config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--paths", type=int, default=100)
        p.add_argument("--grid", type=int, default=500)
        p.add_argument("--quiet", action="store_true")
    return parser


def _apply_thread_cap() -> None:
    cap = os.environ.get("PCE_LAB_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _load_and_validate(path):
    scenario = load_scenario(path)
    problems = validate_scenario(scenario)
    if problems:
        raise _ValidationFailure("\n".join(problems))
    return scenario


class _ValidationFailure(Exception):
    pass


def run_solve(args) -> int:
    scenario = _load_and_validate(args.config)
    sol = solve_pce(scenario)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "pce_coefficients.csv")
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "t", "block", "row", "col", "value"])
        for stage, t, block, i, j, value in coefficient_rows(sol, grid=args.grid):
            w.writerow([stage, "%.17g" % t, block, i, j, "%.17g" % value])
    summary = os.path.join(args.out, "solve_summary.txt")
    with open(summary, "w") as fh:
        fh.write(
            f"scenario: {args.config}\n"
            f"stages: {sol.N}\n"
            f"factor dimension: {scenario.d}\n"
            f"agents: {len(scenario.agents)}\n"
            f"release times: {', '.join(str(t) for t in scenario.times)}\n"
            f"coefficient grid per stage: {args.grid}\n"
        )
    if not args.quiet:
        print(f"wrote {out_path}")
    return EXIT_OK


def run_simulate(args) -> int:
    scenario = _load_and_validate(args.config)
    sol = solve_pce(scenario)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "paths.csv")
    if args.paths == 0:
        export_csv([], out_path)
    else:
        samples = simulate(SimConfig(scenario, sol, seed=args.seed,
                                     n_paths=args.paths, grid=args.grid))
        export_csv(samples, out_path)
    if not args.quiet:
        print(f"wrote {out_path}")
    return EXIT_OK


def _load_limit_spec(path) -> tuple:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidSpec(f"cannot read study file {path}")
    try:
        sec = cp["limit"]
        family = sec.get("family", "flat")
        levels = tuple(int(v) for v in sec.get("levels", "4,6,8,10").split(","))
        samples = int(sec.get("samples", "10000"))
        seed = int(sec.get("seed", "0"))
        if family == "flat":
            spec = reference_limit_spec(N_range=levels)
        elif family == "power":
            spec = power_limit_spec(float(sec["exponent"]), N_range=levels)
        else:
            raise InvalidSpec(f"unknown refinement family {family!r}")
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"study file {path}: {exc}") from exc
    return spec, samples, seed


def run_limit(args) -> int:
    spec, samples, seed = _load_limit_spec(args.config)
    rows = limit_study(spec, n_samples=samples, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "limit_study.csv")
    export_study_csv(rows, out_path)
    if not args.quiet:
        print(f"wrote {out_path}")
    return EXIT_OK


def run_verify(args) -> int:
    results = run_all(quiet=args.quiet)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _apply_thread_cap()
    handler = {"solve": run_solve, "simulate": run_simulate,
               "limit": run_limit, "verify": run_verify}[args.command]
    try:
        return handler(args)
    except InvalidSpec as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except _ValidationFailure as exc:
        print(f"validation failed:\n{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PCELabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
