"""Command line: ``kmr run|report|validate``.

Exit status: 0 success, 1 configuration error, 2 budget failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config, run_experiment, validate
from .errors import KMRError
from .runlog import read_runlog, report_csv

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2


def _run(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, args.out_dir)
    print(
        f"{result.outcome.value}: cost {result.initial.cost:g} -> {result.final.cost:g} "
        f"(budget {result.budget:g}), quality {result.initial.quality:.4f} -> "
        f"{result.final.quality:.4f}, {len(result.log)} steps, stopped: {result.stop_reason}"
    )
    return EXIT_OK if result.success else EXIT_FAILURE


def _report(args) -> int:
    text = report_csv(read_runlog(args.runlog))
    if args.output:
        Path(args.output).write_text(text, newline="")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _validate(args) -> int:
    validate(load_config(args.config))
    print(f"{args.config}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run budgeted optimization from a config")
    run.add_argument("config")
    run.add_argument("--out-dir", type=Path, default=None,
                     help="base directory for the config's output paths")
    run.set_defaults(func=_run)

    report = sub.add_parser("report", help="cost/quality CSV from a run log")
    report.add_argument("runlog")
    report.add_argument("-o", "--output")
    report.set_defaults(func=_report)

    check = sub.add_parser("validate", help="check a config without running it")
    check.add_argument("config")
    check.set_defaults(func=_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except KMRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
