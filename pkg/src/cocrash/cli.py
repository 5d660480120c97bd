"""Command-line entry point.

The output directory comes from ``--output``, then ``$COCRASH_OUTPUT``, then
the ``[run] output`` key of the config file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .cojump import DIRECTIONS
from .errors import ConfigurationError
from .pipeline import (
    EXIT_CODES,
    OUTPUT_ENV,
    RunConfig,
    RunResult,
    run_pipeline,
    run_simulation,
    run_stage,
)

STAGE_COMMANDS = ("ingest", "detect", "cojump", "rank", "null", "liquidity", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="output directory")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    common.add_argument("-v", "--verbose", action="count", default=0)

    run_opts = argparse.ArgumentParser(add_help=False, parents=[common])
    run_opts.add_argument("--config", required=True, help="INI run configuration")
    run_opts.add_argument("--alpha", type=float, help="jump-test significance level")
    run_opts.add_argument("--direction", choices=DIRECTIONS, help="which jumps form co-crashes")

    parser = argparse.ArgumentParser(prog="cocrash", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "resample inputs to a panel snapshot and asset table",
        "detect": "flag per-asset jumps",
        "cojump": "group jumps into co-crashes and count frequencies",
        "rank": "cross-size rank correlations and steady states",
        "null": "null-model significance quantiles",
        "liquidity": "dollar-volume relations by crash size",
        "report": "collate per-size figure tables from an earlier analyze",
        "analyze": "run the full chain and write a manifest",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[run_opts], help=text)
    sim = sub.add_parser("simulate", parents=[common], help="draw a synthetic panel from a plan file")
    sim.add_argument("--plan", required=True, help="plan file")
    return parser


def _output(args, configured=None):
    return args.output or os.environ.get(OUTPUT_ENV) or configured


def _report(result: RunResult, output) -> None:
    if result.exit_code == 0:
        print(f"wrote {len(result.artifacts)} artifacts to {output}")
        for key, value in result.summary.items():
            print(f"{key}: {value}")
    else:
        print(f"error: {result.failure}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "simulate":
        output = _output(args, "simulated")
        result = run_simulation(args.plan, output, args.seed)
        _report(result, output)
        return result.exit_code
    try:
        config = RunConfig.from_file(args.config).with_overrides(
            seed=args.seed, threads=args.threads, alpha=args.alpha,
            output=_output(args), direction=args.direction,
        )
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    if args.command == "analyze":
        result = run_pipeline(config)
    else:
        result = run_stage(config, args.command)
    _report(result, config.output)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
