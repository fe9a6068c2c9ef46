"""
Argument parser for the crashbayes command line.
"""

import argparse

import config
from src import __version__
from src.cli.commands import SYNTH_EXPERIMENTS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=config.TOOLKIT_NAME,
        description=config.TOOLKIT_DESCRIPTION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Pipeline: ingest -> screen -> fit -> compare -> report.\n"
            "Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical or convergence error."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    # Global flags are accepted after the subcommand as well
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="Run config YAML")
    common.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    common.add_argument("--out", default=None, metavar="DIR", help="Output directory (overrides the config)")
    common.add_argument("--jobs", type=int, default=None, help="Parallel chains per fit")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    subparsers.add_parser("ingest", parents=[common], help="Link, classify and encode crash records")

    screen = subparsers.add_parser("screen", parents=[common], help="VIF-screen coded datasets")
    screen.add_argument("--model", action="append", dest="labels", metavar="LABEL",
                        help="Model label (repeatable; default all)")

    fit = subparsers.add_parser("fit", parents=[common], help="Fit models by MCMC")
    fit.add_argument("--model", action="append", dest="labels", metavar="LABEL",
                     help="Model label (repeatable; default all)")
    fit.add_argument("--skip-screen", action="store_true", help="Fit without a prior VIF screen")
    fit.add_argument("--allow-unconverged", action="store_true",
                     help="Exit 0 even when the convergence check fails")

    compare = subparsers.add_parser("compare", parents=[common], help="Rank fits by WAIC and LOO")
    compare.add_argument("--labels", nargs="+", default=None, metavar="LABEL", help="Fits to compare")
    compare.add_argument("--name", default="", help="Named comparison from the config, or output name")

    synth = subparsers.add_parser("synth", parents=[common], help="Synthetic data and calibration experiments")
    synth.add_argument("--experiment", choices=SYNTH_EXPERIMENTS, default="generate")
    synth.add_argument("--replications", type=int, default=None)

    report = subparsers.add_parser("report", parents=[common], help="Re-render stored fits as one text report")
    report.add_argument("--model", action="append", dest="labels", metavar="LABEL")

    return parser
