"""Command line entry point: run, figure, validate, tabulate, resume.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 infeasibility.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .exceptions import BracketError, InfeasibleConstraintError
from .runner import (FIGURES, ConfigError, RunConfig, cmd_figure, cmd_resume, cmd_run,
                     cmd_tabulate, cmd_validate, resolve_output_dir)

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON RunConfig file; flags override its fields")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "delta_fractions":
            p.add_argument(flag, type=_floats, dest=f.name, help="comma separated fractions of Z20")
        elif f.name == "z2_policy":
            p.add_argument(flag, dest=f.name, choices=("unbounded", "bound", "delta", "beta"))
        elif f.name in ("N", "equilibration_sweeps", "measurement_sweeps", "sweep_size",
                        "snapshot_stride", "batch_sweeps", "refresh_accepts", "seed", "chains",
                        "checkpoint_every"):
            p.add_argument(flag, type=int, dest=f.name)
        elif f.name == "output_dir":
            p.add_argument(flag, "-o", dest=f.name)
        else:
            p.add_argument(flag, type=float, dest=f.name)


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return RunConfig.from_dict(base).validate()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lattice-vortex",
                                 description="Microcanonical Monte Carlo of lattice vortex loops")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run chains and write logs, tables and a manifest")
    _add_config_flags(p)
    p = sub.add_parser("figure", help="emit plot-ready CSV for one figure")
    p.add_argument("figure_id", choices=FIGURES)
    p.add_argument("--Ns", type=_ints, help="lattice sizes for fig2, comma separated")
    p.add_argument("--targets", type=_floats, help="beta targets for fig4, comma separated")
    _add_config_flags(p)
    p = sub.add_parser("tabulate", help="beta against the enstrophy bound")
    _add_config_flags(p)
    p = sub.add_parser("resume", help="continue an interrupted run from its checkpoints")
    p.add_argument("run_dir")
    p = sub.add_parser("validate", help="fast invariant suite")
    p.add_argument("--fault-green", action="store_true",
                   help="corrupt one Green-table entry to exercise the failure path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            rep = cmd_validate(green_fault=args.fault_green)
            return EXIT_OK if rep.passed else EXIT_VALIDATION
        if args.command == "resume":
            manifest = cmd_resume(Path(args.run_dir))
            out = Path(args.run_dir)
        else:
            cfg = config_from_args(args)
            out = resolve_output_dir(cfg, getattr(args, "output_dir", None))
            if args.command == "run":
                manifest = cmd_run(cfg, out)
            elif args.command == "tabulate":
                manifest = cmd_tabulate(cfg, out)
            else:
                manifest = cmd_figure(args.figure_id, cfg, out, Ns=args.Ns, targets=args.targets)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleConstraintError, BracketError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(json.dumps({"output_dir": str(out), "files": len(manifest["files"]),
                      "config_hash": manifest["config_hash"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
