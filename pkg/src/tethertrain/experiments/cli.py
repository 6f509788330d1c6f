"""Command line entry points.

    tethertrain run <config.json>      execute an experiment family
    tethertrain sweep <config.json>    run a film-lr sweep config
    tethertrain verify <run_dir>       re-hash outputs against manifests
    tethertrain report <run_dir>       summary tables + figures

The output root defaults to ./runs and can be moved with the
TETHERTRAIN_OUT environment variable.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigurationError
from .config import EXPERIMENTS, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tethertrain",
        description="teacher-arm training rig experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment named in the config")
    p_run.add_argument("config", help="path to a JSON run config")

    p_sweep = sub.add_parser("sweep", help="run a film learning-rate sweep config")
    p_sweep.add_argument("config", help="path to a JSON run config (experiment: film_lr)")

    p_verify = sub.add_parser("verify", help="check output hashes of a finished run")
    p_verify.add_argument("run_dir")

    p_report = sub.add_parser("report", help="aggregate CSVs and render figures")
    p_report.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "sweep"):
            cfg = load_config(args.config)
            if args.command == "sweep" and cfg.experiment != "film_lr":
                raise ConfigurationError(
                    f"sweep expects a film_lr config, got {cfg.experiment!r}"
                )
            from .runner import run_experiment

            run_experiment(cfg)
            return 0
        if args.command == "verify":
            from .report import verify

            return 0 if verify(args.run_dir) else 1
        if args.command == "report":
            from .report import report

            report(args.run_dir)
            return 0
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"valid experiment ids: {', '.join(EXPERIMENTS)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
