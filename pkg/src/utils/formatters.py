"""
Formatting utilities for displaying results.

Handles odds ratios, estimates, effect magnitudes, percentages and other
display formatting in the layout of published result tables.
"""

import math
from typing import Optional

MINUS = "−"


def format_number(value: float, digits: int = 2) -> str:
    """
    Fixed-point number with a typographic minus sign.

    Example:
        >>> format_number(-0.234)
        '−0.23'
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    if math.isinf(value):
        return "inf" if value > 0 else f"{MINUS}inf"
    text = f"{value:.{digits}f}"
    if text.startswith("-"):
        stripped = text[1:]
        # -0.00 renders as 0.00
        return stripped if float(stripped) == 0.0 else MINUS + stripped
    return text


def format_estimate(estimate: float, std_error: float, digits: int = 2) -> str:
    """
    'Estimate (std error)' cell.

    Example:
        >>> format_estimate(-0.23, 0.08)
        '−0.23 (0.08)'
    """
    return f"{format_number(estimate, digits)} ({format_number(std_error, digits)})"


def format_odds_ratio(odds_ratio: float, low: float, high: float, digits: int = 2) -> str:
    """
    'Odds ratio (95% BCI)' cell.

    Example:
        >>> format_odds_ratio(0.7945, 0.66, 0.96)
        '0.79 (0.66~0.96)'
    """
    return f"{format_number(odds_ratio, digits)} ({format_number(low, digits)}~{format_number(high, digits)})"


def format_effect(percent: float) -> str:
    """
    Signed whole-percent change in the odds.

    Example:
        >>> format_effect(57.0000001)
        '+57%'
        >>> format_effect(-64.0)
        '−64%'
    """
    rounded = int(round(percent))
    if rounded > 0:
        return f"+{rounded}%"
    if rounded < 0:
        return f"{MINUS}{-rounded}%"
    return "0%"


def format_percent(value: float, digits: int = 1) -> str:
    return f"{format_number(value, digits)}%"


def format_vif(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.2f}"


def format_significance(significant: bool) -> str:
    return "*" if significant else ""


def format_duration(seconds: float) -> str:
    """
    Format duration in seconds to readable string.

    Example:
        >>> format_duration(65.5)
        '1m 5.5s'
        >>> format_duration(3.2)
        '3.20s'
    """
    if seconds < 60:
        return f"{seconds:.2f}s"

    minutes = int(seconds // 60)
    remaining_seconds = seconds % 60
    return f"{minutes}m {remaining_seconds:.1f}s"


def pluralize(count: int, singular: str, plural: Optional[str] = None) -> str:
    """
    Return singular or plural form based on count.

    Example:
        >>> pluralize(1, 'draw')
        '1 draw'
        >>> pluralize(5, 'draw')
        '5 draws'
    """
    if plural is None:
        plural = singular + 's'

    form = singular if count == 1 else plural
    return f"{count} {form}"
