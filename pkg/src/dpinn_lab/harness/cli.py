"""Command-line entry point: ``dpinn-lab {solve,sweep,baseline,elm,diagnose}``."""
from __future__ import annotations

import argparse
import os
import sys

from ..errors import (
    DomainError,
    DpinnLabError,
    InvalidArchitectureError,
    InvalidConfigError,
    InvalidInputError,
    UnsupportedArchitectureError,
    UnsupportedTrialError,
)
from . import config as C
from . import runner

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (InvalidConfigError, InvalidArchitectureError, UnsupportedArchitectureError,
                     InvalidInputError, UnsupportedTrialError, DomainError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpinn-lab",
                                     description="Block-decomposed PINN and ELM experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "train one configuration; writes solution.csv, trace.csv, report.json",
        "sweep": "run a Cartesian sweep; writes summary.csv",
        "baseline": "finite-difference baselines; writes baseline.csv",
        "elm": "single-shot ELM solve; writes solution.csv, report.json",
        "diagnose": "piecewise polynomial or exponential-fit probe",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--log-stride", type=int, default=None,
                       help="override train.log_stride")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=None,
                           help="parallel cells (default: $DPINN_LAB_JOBS or 1)")
    return parser


def _apply_overrides(raw: dict, args) -> dict:
    cfg = C.with_seed(raw, args.seed)
    if args.log_stride is not None:
        if args.log_stride < 1:
            raise InvalidConfigError("--log-stride must be at least 1")
        if "train" in cfg or args.command == "solve":
            cfg = C.set_path(cfg, "train.log_stride", args.log_stride)
    return cfg


def _summary(rep: dict) -> str:
    keys = ("status", "L_total", "max_error", "l2_error", "iterations", "param_error")
    return " ".join(f"{k}={rep[k]}" for k in keys if rep.get(k) is not None)


def run(args) -> int:
    raw = C.load(args.config)
    out = args.out
    if args.command == "sweep":
        sweep = raw
        if args.seed is not None and isinstance(raw, dict) and isinstance(raw.get("base"), dict):
            base = raw["base"]
            block = "elm" if "elm" in base else "train"
            sweep = dict(raw, base=C.set_path(base, f"{block}.seed", args.seed))
        header, rows = runner.run_sweep(sweep, out, args.jobs, args.log_stride)
        bad = sum(1 for r in rows if r["status"] != "ok")
        print(f"{len(rows)} cells, {bad} not ok -> {os.path.join(out, 'summary.csv')}")
        return EXIT_OK
    if not isinstance(raw, dict) or "problem" not in raw:
        C.validate(raw)
    if args.command == "solve":
        cfg = C.resolve(_apply_overrides(raw, args), "solve")
        rep = runner.run_solve(cfg, out)
    elif args.command == "elm":
        cfg = C.resolve(C.with_seed(raw, args.seed), "elm")
        rep = runner.run_elm(cfg, out)
    elif args.command == "baseline":
        cfg = C.resolve(raw, "baseline")
        rep = runner.run_baseline(cfg, out)
        print(f"Pe={rep['peclet']:.6g} -> {os.path.join(out, 'baseline.csv')}")
        return EXIT_OK
    else:
        cfg = C.resolve(raw, "diagnose")
        rep = runner.run_diagnose(cfg, out)
    print(_summary(rep))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DpinnLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
