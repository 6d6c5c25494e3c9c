"""Command line entry point for the twin-experiment pipeline.

Exit codes: 0 on success, 1 for usage errors and missing artifacts, 2 for
numerical failures (model blow-up, divergent regressor or benchmark, ...).
"""

from __future__ import annotations

import argparse
import sys

from . import harness

PHASE_COMMANDS = {
    "nature": harness.run_nature_phase,
    "observe": harness.run_observe_phase,
    "tune-gc": harness.run_gc_tuning_phase,
    "train": harness.run_training_phase,
    "verify": harness.run_verification_phase,
    "all": harness.run_all,
}

THREADED = {"tune-gc", "train", "verify", "all"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this pipeline reserves 2 for
    # numerical failures, so route parser errors to exit code 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise harness.UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="locmap",
        description=(
            "Train and evaluate regression-learned localization maps for "
            "serial ensemble Kalman filters on the Lorenz-96 model."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*PHASE_COMMANDS, "report"):
        help_text = {
            "nature": "integrate the truth trajectory",
            "observe": "synthesise observations from the truth",
            "tune-gc": "grid-search Gaspari-Cohn half-widths on the training window",
            "train": "archive the regressor filter and fit localization maps",
            "verify": "score all (scheme, ensemble size, inflation) cells",
            "all": "run every phase in order",
            "report": "print the results and tuning tables",
        }[name]
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the experiment JSON config")
        cmd.add_argument("--seed", type=int, default=None, help="override the master seed")
        cmd.add_argument("--out-dir", default=None, help="override the output root directory")
        if name != "report":
            cmd.add_argument(
                "--force", action="store_true", help="recompute the phase even if complete"
            )
        if name in THREADED:
            cmd.add_argument(
                "--threads", type=int, default=1, help="worker threads for independent cells"
            )
    return parser


def _load_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if overrides:
        data = config.to_dict()
        data.update(overrides)
        config = harness.ExperimentConfig.from_dict(data)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args)
        if args.command == "report":
            print(harness.format_report(config))
            return 0
        runner = PHASE_COMMANDS[args.command]
        kwargs = {"force": args.force}
        if args.command in THREADED:
            kwargs["threads"] = args.threads
        runner(config, **kwargs)
        print(f"{args.command}: done ({config.run_dir})")
        return 0
    except harness.UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except harness.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
