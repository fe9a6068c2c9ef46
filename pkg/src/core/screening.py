"""
Multicollinearity screening by variance inflation factors.

Each column is regressed on all other columns plus an intercept;
vif = 1 / (1 - R^2). Near-exact dependence reports +inf.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from src.core.errors import UnderdeterminedDesign

logger = logging.getLogger(__name__)

PASS = "PASS"
FAIL = "FAIL"


@dataclass
class VifReport:
    """
    Per-column VIFs with the columns above threshold.

    Attributes:
        per_column: (column_name, vif) in design order
        threshold: Flagging threshold (strict '>')
        flagged: Columns with vif > threshold
        verdict: PASS, FAIL, or None when not screened
    """
    per_column: List[Tuple[str, float]]
    threshold: float = config.VIF_THRESHOLD
    flagged: List[str] = field(default_factory=list)
    verdict: Optional[str] = None

    @property
    def max_vif(self) -> float:
        return max((v for _, v in self.per_column), default=float("nan"))

    def vif(self, name: str) -> float:
        return dict(self.per_column)[name]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"column": name, "vif": value, "flagged": name in self.flagged} for name, value in self.per_column],
            columns=["column", "vif", "flagged"],
        )


def vif_from_matrix(matrix: np.ndarray, tol: float = config.VIF_SINGULAR_TOL) -> np.ndarray:
    """
    VIF of every column of a numeric matrix.

    Raises:
        UnderdeterminedDesign: rows <= columns, or fewer than 2 columns
    """
    matrix = np.asarray(matrix, dtype=float)
    n, k = matrix.shape
    if k < 2:
        raise UnderdeterminedDesign(f"VIF needs at least 2 columns, got {k}")
    if n <= k:
        raise UnderdeterminedDesign(f"{n} row(s) cannot support a VIF regression over {k} columns")

    values = np.empty(k)
    ones = np.ones((n, 1))
    for col in range(k):
        target = matrix[:, col]
        centered = target - target.mean()
        total = float(centered @ centered)
        if total == 0.0:
            values[col] = np.inf
            continue
        others = np.hstack([ones, np.delete(matrix, col, axis=1)])
        coef, _, _, _ = np.linalg.lstsq(others, target, rcond=None)
        residual = target - others @ coef
        unexplained = float(residual @ residual) / total
        values[col] = np.inf if unexplained <= tol else 1.0 / unexplained
    return values


def _screened_matrix(design) -> Tuple[np.ndarray, List[str]]:
    names = list(design.column_names) + [f"L2:{z}" for z in design.level2_names]
    return np.hstack([design.fixed_design, design.level2_design]), names


def compute_vif(design, threshold: float = config.VIF_THRESHOLD) -> VifReport:
    """VIFs over the fixed and level-2 columns of a coded dataset."""
    matrix, names = _screened_matrix(design)
    values = vif_from_matrix(matrix)
    per_column = [(name, float(value)) for name, value in zip(names, values)]
    flagged = [name for name, value in per_column if value > threshold]
    return VifReport(per_column=per_column, threshold=threshold, flagged=flagged)


def screen(design, threshold: float = config.VIF_THRESHOLD) -> VifReport:
    """
    Screen a design: PASS iff every VIF is finite and <= threshold.

    A threshold of 0 fails every design.
    """
    report = compute_vif(design, threshold)
    values = np.array([v for _, v in report.per_column])
    passed = bool(np.isfinite(values).all() and values.max() <= threshold)
    report.verdict = PASS if passed else FAIL
    if passed:
        logger.info("VIF screen passed: max VIF %.3g <= %g", values.max(), threshold)
    else:
        logger.warning("VIF screen failed at threshold %g: %s", threshold, ", ".join(report.flagged))
    return report


def rank_columns(report: VifReport) -> Sequence[Tuple[str, float]]:
    """Columns ordered by decreasing VIF."""
    return sorted(report.per_column, key=lambda item: -item[1])
