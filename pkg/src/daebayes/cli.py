"""Command-line entry points wiring the estimation pipeline.

Verbs: simulate | identify | estimate | ablate | report. Exit codes: 0 on
success, 2 on configuration errors, 3 when the truth/model is infeasible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .config import ConfigError, RunConfig, load_config
from .dae import PowerFlowDiverged, StepDiverged


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daebayes",
        description="Joint Bayesian calibration of generator and network "
                    "parameters of a power-system DAE from synthetic PMU data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("simulate", "generate synthetic PMU measurement sets"),
            ("identify", "co-identifiability map from the local curvature"),
            ("estimate", "run the joint or decoupled posterior estimation"),
            ("ablate", "matched-budget sampler ablation table"),
            ("report", "re-render the consolidated report from an output dir")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="run-config file (defaults used when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (overrides config)")
        if name in ("estimate", "ablate"):
            p.add_argument("--budget", choices=("short", "full"), default=None)
        if name == "estimate":
            p.add_argument("--mode", choices=("joint", "decoupled"), default=None)
        if name == "identify":
            p.add_argument("--center", choices=("zero", "init", "truth"), default=None)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "budget", None):
        cfg = replace(cfg, budget=args.budget)
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "center", None):
        cfg = replace(cfg, identify_center=args.center)
    return cfg.validated()


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    from . import pipeline as pl
    from . import report as rp

    if args.command == "report":
        return _cmd_report(cfg)

    try:
        pipe = pl.build_pipeline(cfg)
    except (PowerFlowDiverged, StepDiverged) as err:
        print(f"infeasible truth/model: {err}", file=sys.stderr)
        return 3

    out = cfg.out_dir
    if args.command == "simulate":
        for path in rp.write_measurements(out, pipe):
            print(path)
        return 0

    if args.command == "identify":
        try:
            curv = pl.identify_at(pipe, cfg.identify_center)
        except (PowerFlowDiverged, StepDiverged) as err:
            print(f"infeasible model at identify center: {err}", file=sys.stderr)
            return 3
        except ValueError as err:
            print(f"identifiability error: {err}", file=sys.stderr)
            return 3
        for path in rp.write_curvature(out, cfg, curv):
            print(path)
        return 0

    if args.command == "estimate":
        try:
            result = pl.run_estimate(pipe)
        except (PowerFlowDiverged, StepDiverged) as err:
            print(f"infeasible model during estimation: {err}", file=sys.stderr)
            return 3
        rp.write_measurements(out, pipe)
        for path in rp.write_estimate(out, result):
            print(path)
        failed = [name for name, ok, _ in result.checks if not ok]
        if failed:
            print("built-in checks FAILED: " + "; ".join(failed), file=sys.stderr)
        return 0

    if args.command == "ablate":
        try:
            ab = pl.run_ablation(pipe)
        except (PowerFlowDiverged, StepDiverged) as err:
            print(f"infeasible model during ablation: {err}", file=sys.stderr)
            return 3
        for path in rp.write_ablation(out, ab):
            print(path)
        print(f"median posterior-mean shift DA vs exact-only: "
              f"{100 * ab.median_shift:.3f}%")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def _cmd_report(cfg: RunConfig) -> int:
    path = os.path.join(cfg.out_dir, "report.txt")
    ledger_path = os.path.join(cfg.out_dir, "ledger.json")
    if not os.path.exists(path):
        print(f"no report found under {cfg.out_dir!r}; run `daebayes estimate` first",
              file=sys.stderr)
        return 2
    with open(path) as fh:
        sys.stdout.write(fh.read())
    if os.path.exists(ledger_path):
        with open(ledger_path) as fh:
            ledger = json.load(fh)
        print(f"(ledger: {ledger.get('exact_solves', '?')} exact / "
              f"{ledger.get('coarse_solves', '?')} coarse solves)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
