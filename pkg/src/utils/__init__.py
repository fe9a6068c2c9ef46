"""Utility functions."""
from .formatters import format_effect, format_odds_ratio
from .exporters import ReportExporter

__all__ = ['format_effect', 'format_odds_ratio', 'ReportExporter']
