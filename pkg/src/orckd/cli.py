"""Command line entry point: ``orckd run`` and ``orckd summarize``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import apply_preset, default_config, parse_config, PRESET_AXES, with_overrides
from .errors import ConfigError, FormatError, OrcError, TrainError
from .metrics import summarize

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN = 0, 2, 3


def _limit_threads() -> None:
    try:
        n = int(os.environ.get("ORC_THREADS", "1"))
    except ValueError:
        raise ConfigError("ORC_THREADS must be an integer") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return
    threadpool_limits(max(n, 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orckd", description="Online role change distillation runs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a ladder and write metrics.csv")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--preset", choices=sorted(PRESET_AXES))
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")

    summ = sub.add_parser("summarize", help="best-epoch accuracy table across runs")
    summ.add_argument("csv", nargs="+")
    return parser


def load_run_config(args):
    if args.config is None and args.preset is None:
        raise ConfigError("give --config, --preset, or both")
    cfg = parse_config(args.config) if args.config else default_config()
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["train__seed"] = args.seed
    if args.out is not None:
        overrides["train__output_dir"] = args.out
    return with_overrides(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "summarize":
        try:
            sys.stdout.write(summarize(args.csv))
        except FormatError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .trainer import run_experiment

    try:
        _limit_threads()
        cfg = load_run_config(args)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainError, OrcError, OSError) as exc:
        print(f"train error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    print(result.metrics_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
