"""
Export utilities for result tables.

Renders fit summaries, comparisons, VIF screens and frequency reports as
aligned text and as DataFrames ready for CSV.
"""

from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.utils.formatters import (
    format_effect,
    format_estimate,
    format_number,
    format_odds_ratio,
    format_percent,
    format_significance,
    format_vif,
    pluralize,
)

RULE_WIDTH = 80


def _banner(title: str) -> List[str]:
    return ["=" * RULE_WIDTH, title, "=" * RULE_WIDTH]


def _table(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "(none)"
    return frame.to_string(index=False)


class ReportExporter:
    """Turns toolkit result objects into text tables and CSV frames."""

    @staticmethod
    def fit_table(report) -> pd.DataFrame:
        """Fixed effects then random-effect SDs, one display row each."""
        from src.core.evaluation import effect_magnitude

        rows = []
        for summary in report.fixed:
            rows.append({
                "Variable": summary.name,
                "Estimate (std error)": format_estimate(summary.estimate, summary.std_error),
                "Odds ratio (95% BCI)": format_odds_ratio(summary.odds_ratio, summary.or_low, summary.or_high),
                "Effect": format_effect(effect_magnitude(summary)),
                "Sig.": format_significance(summary.significant),
            })
        for summary in report.random_sd:
            rows.append({
                "Variable": summary.name,
                "Estimate (std error)": format_estimate(summary.estimate, summary.std_error),
                "Odds ratio (95% BCI)": format_odds_ratio(summary.odds_ratio, summary.or_low, summary.or_high),
                "Effect": "",
                "Sig.": "",
            })
        return pd.DataFrame(rows, columns=["Variable", "Estimate (std error)", "Odds ratio (95% BCI)", "Effect", "Sig."])

    @staticmethod
    def fit_text(report, convergence=None) -> str:
        """
        Fit summary mirroring published coefficient tables.

        Args:
            report: FitReport
            convergence: Optional ConvergenceReport appended below the table
        """
        output = _banner(f"MODEL {report.label}: response '{report.response_name}' ({report.mode})")
        output.append(f"{pluralize(report.n_obs, 'observation')}, {pluralize(report.n_draws, 'posterior draw')}")
        output.append("Intervals are 95% Bayesian credible intervals; * marks intervals excluding OR = 1.")
        output.append("-" * RULE_WIDTH)
        output.append(_table(ReportExporter.fit_table(report)))
        output.append("-" * RULE_WIDTH)
        output.append(f"WAIC  {format_number(report.waic.waic, 1)} (se {format_number(report.waic.se, 1)}), "
                      f"p_waic {format_number(report.waic.p_waic, 2)}")
        output.append(f"LOOIC {format_number(report.loo.looic, 1)} (se {format_number(report.loo.se, 1)}), "
                      f"p_loo {format_number(report.loo.p_loo, 2)}, "
                      f"{pluralize(report.loo.n_bad_k, 'observation')} with pareto k > 0.7")
        if convergence is not None:
            verdict = "PASS" if convergence.overall_pass else "FAIL"
            worst = max((p.interval_ratio for p in convergence.per_parameter), default=float("nan"))
            output.append(f"Convergence {verdict}: max interval ratio {format_number(worst, 3)} "
                          f"(tol {format_number(convergence.tol, 2)})")
            if convergence.flagged:
                output.append("Flagged: " + ", ".join(convergence.flagged))
        output.append("=" * RULE_WIDTH)
        return "\n".join(output) + "\n"

    @staticmethod
    def comparison_text(comparison, title: str = "MODEL COMPARISON") -> str:
        """Ranking of models by WAIC with the LOO column beside it."""
        frame = pd.DataFrame([
            {
                "Model": row.label,
                "WAIC": format_number(row.waic, 1),
                "dWAIC": format_number(row.d_waic, 1),
                "LOO": format_number(row.looic, 1),
                "dLOO": format_number(row.d_looic, 1),
                "p_waic": format_number(row.p_waic, 2),
                "k>0.7": row.n_bad_k,
            }
            for row in comparison.rows
        ])
        output = _banner(title)
        output.append(_table(frame))
        output.append("-" * RULE_WIDTH)
        output.append(f"Best by WAIC: {comparison.best_by_waic}")
        output.append(f"Best by LOO:  {comparison.best_by_loo}")
        output.append("=" * RULE_WIDTH)
        return "\n".join(output) + "\n"

    @staticmethod
    def vif_text(report, title: str = "VARIANCE INFLATION FACTORS") -> str:
        from src.core.screening import rank_columns

        frame = pd.DataFrame(
            [{"Column": name, "VIF": format_vif(value), "Flag": "x" if name in report.flagged else ""}
             for name, value in rank_columns(report)]
        )
        output = _banner(title)
        output.append(_table(frame))
        output.append("-" * RULE_WIDTH)
        output.append(f"Threshold {format_number(report.threshold, 1)}: {report.verdict or 'not screened'}")
        output.append("=" * RULE_WIDTH)
        return "\n".join(output) + "\n"

    @staticmethod
    def frequency_text(frequency: pd.DataFrame) -> str:
        """Level counts per mode; reference levels carry a trailing '*'."""
        display = frequency.copy()
        display["Level"] = [
            f"{level}*" if reference else level
            for level, reference in zip(display["Level"], display["Reference"])
        ]
        for column in [c for c in display.columns if c.endswith("Percent")]:
            display[column] = [format_percent(v) for v in display[column]]
        return _table(display.drop(columns=["Reference"]))

    @staticmethod
    def ingest_text(counts: Dict[str, int], excluded: Sequence, frequency: pd.DataFrame,
                    continuous: Optional[pd.DataFrame] = None, warnings: Sequence[str] = ()) -> str:
        """Row counts by driving mode, exclusions and the level frequency table."""
        output = _banner("INGESTION REPORT")
        for mode, count in counts.items():
            output.append(f"{mode:14}: {pluralize(count, 'record')}")
        for crash_id, reason in excluded:
            output.append(f"excluded {crash_id}: {reason}")
        for message in warnings:
            output.append(f"warning: {message}")
        output.append("-" * RULE_WIDTH)
        output.append(ReportExporter.frequency_text(frequency))
        if continuous is not None and not continuous.empty:
            output.append("-" * RULE_WIDTH)
            shown = continuous.copy()
            for column in ("Mean", "S.D.", "Min", "Max"):
                shown[column] = [format_number(v, 2) for v in shown[column]]
            output.append(_table(shown))
        output.append("=" * RULE_WIDTH)
        return "\n".join(output) + "\n"
