"""
crashbayes - Main Application Entry Point

Command-line toolkit for hierarchical Bayesian logistic regression on crash
records. Run `python app.py --help` for the subcommands.

Version: 1.0
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
