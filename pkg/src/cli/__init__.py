"""Command-line entry point."""

import logging
import sys
from typing import Optional, Sequence

import config
from src.cli.commands import cmd_compare, cmd_fit, cmd_ingest, cmd_report, cmd_screen, cmd_synth
from src.cli.parser import build_parser
from src.cli.run_config import RunConfig
from src.core.errors import CrashBayesError

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=config.LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def dispatch(args) -> int:
    run = RunConfig.from_yaml(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
    if args.command == "ingest":
        return cmd_ingest(run)
    if args.command == "screen":
        return cmd_screen(run, args.labels)
    if args.command == "fit":
        return cmd_fit(run, args.labels, skip_screen=args.skip_screen, allow_unconverged=args.allow_unconverged)
    if args.command == "compare":
        return cmd_compare(run, args.labels, name=args.name)
    if args.command == "synth":
        return cmd_synth(run, args.experiment, args.replications)
    return cmd_report(run, args.labels)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return dispatch(args)
    except CrashBayesError as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error[{exc.family}]: {exc}", file=sys.stderr)
        return exc.exit_code
