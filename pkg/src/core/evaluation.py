"""
Posterior summaries, odds ratios, WAIC, PSIS-LOO and model comparison.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

import config
from src.core.errors import (
    AllEqualTail,
    DegenerateDraws,
    InsufficientDraws,
    InsufficientModels,
    MismatchedDataset,
    TooFewTailSamples,
)

logger = logging.getLogger(__name__)


@dataclass
class ParameterSummary:
    """
    Posterior summary of one coefficient.

    significant is True when the credible interval excludes 0, which is the
    same as the odds-ratio interval excluding 1.
    """
    name: str
    estimate: float
    std_error: float
    bci_low: float
    bci_high: float
    odds_ratio: float
    or_low: float
    or_high: float
    significant: bool
    kind: str = "fixed"

    def to_dict(self) -> dict:
        return {
            "parameter": self.name,
            "kind": self.kind,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "bci_low": self.bci_low,
            "bci_high": self.bci_high,
            "odds_ratio": self.odds_ratio,
            "or_low": self.or_low,
            "or_high": self.or_high,
            "significant": self.significant,
        }


def odds_ratio(estimate: float) -> float:
    """Odds ratio of a logit-scale coefficient."""
    return float(np.exp(estimate))


def summarize_samples(name: str, samples: np.ndarray, prob: float = config.BCI_PROB,
                      kind: str = "fixed") -> ParameterSummary:
    """Summary of one pooled sample; interval from type-7 quantiles."""
    samples = np.asarray(samples, dtype=float).ravel()
    tail = (1.0 - prob) / 2.0
    low, high = np.quantile(samples, [tail, 1.0 - tail], method=config.QUANTILE_METHOD)
    estimate = float(samples.mean())
    return ParameterSummary(
        name=name,
        estimate=estimate,
        std_error=float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
        bci_low=float(low),
        bci_high=float(high),
        odds_ratio=odds_ratio(estimate),
        or_low=odds_ratio(low),
        or_high=odds_ratio(high),
        significant=bool(not low <= 0.0 <= high),
        kind=kind,
    )


def summarize(draws, prob: float = config.BCI_PROB, names: Optional[Sequence[str]] = None) -> List[ParameterSummary]:
    """
    Summaries of every parameter (or the named ones), pooled over chains.

    Raises:
        InsufficientDraws: fewer than 100 pooled draws
    """
    pooled = draws.pooled()
    if pooled.shape[0] < config.MIN_SUMMARY_DRAWS:
        raise InsufficientDraws(
            f"{pooled.shape[0]} pooled draw(s); summaries need at least {config.MIN_SUMMARY_DRAWS}"
        )
    kinds = draws.param_kinds or ["fixed"] * len(draws.param_names)
    selected = names if names is not None else draws.param_names
    summaries = []
    for name in selected:
        col = draws.param_names.index(name)
        summaries.append(summarize_samples(name, pooled[:, col], prob, kinds[col]))
    return summaries


def effect_magnitude(summary: Union[ParameterSummary, float]) -> float:
    """
    Signed percentage change in the odds: (OR - 1) * 100.

    Example:
        >>> round(effect_magnitude(1.57))
        57
    """
    ratio = summary.odds_ratio if isinstance(summary, ParameterSummary) else float(summary)
    return (ratio - 1.0) * 100.0


def _as_draw_matrix(loglik: np.ndarray) -> np.ndarray:
    """(chains, draws, n) or (draws, n) -> (draws, n)."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim == 3:
        loglik = loglik.reshape(-1, loglik.shape[-1])
    if loglik.ndim != 2:
        raise DegenerateDraws(f"pointwise log-likelihood must be 2-D, got shape {loglik.shape}")
    if loglik.shape[0] < 2:
        raise DegenerateDraws(f"{loglik.shape[0]} draw(s); at least 2 are required")
    if not np.isfinite(loglik).all():
        raise DegenerateDraws("pointwise log-likelihood has non-finite entries")
    return loglik


@dataclass
class WaicResult:
    """WAIC on the deviance scale: waic = -2 * (lppd - p_waic)."""
    lppd: float
    p_waic: float
    waic: float
    se: float
    pointwise: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def elpd_waic(self) -> float:
        return self.lppd - self.p_waic

    def to_dict(self) -> dict:
        return {"lppd": self.lppd, "p_waic": self.p_waic, "elpd_waic": self.elpd_waic, "waic": self.waic,
                "waic_se": self.se}


def waic(loglik_pointwise: np.ndarray) -> WaicResult:
    """
    Widely applicable information criterion.

    lppd_i = log mean_s exp(l_is); p_waic_i = var_s(l_is) with divisor S - 1.

    Raises:
        DegenerateDraws: fewer than 2 draws or non-finite entries
    """
    loglik = _as_draw_matrix(loglik_pointwise)
    n_draws = loglik.shape[0]
    lppd_i = logsumexp(loglik, axis=0) - np.log(n_draws)
    p_waic_i = np.var(loglik, axis=0, ddof=1)
    waic_i = -2.0 * (lppd_i - p_waic_i)
    lppd, p_waic = float(lppd_i.sum()), float(p_waic_i.sum())
    if np.any(p_waic_i > 0.4):
        logger.warning("%d observation(s) have log predictive density variance above 0.4",
                       int(np.sum(p_waic_i > 0.4)))
    return WaicResult(
        lppd=lppd,
        p_waic=p_waic,
        waic=-2.0 * (lppd - p_waic),
        se=float(np.sqrt(waic_i.size * np.var(waic_i))),
        pointwise=waic_i,
    )


def fit_generalized_pareto(tail_sample: np.ndarray) -> Tuple[float, float]:
    """
    Profile-likelihood empirical-Bayes estimate of GPD shape and scale.

    Shape k is positive for heavy tails. A weakly informative prior pulls k
    toward 0.5. Constant exceedances give the degenerate limit (-1, value).

    Raises:
        TooFewTailSamples: fewer than 5 exceedances
        AllEqualTail: every exceedance is zero
    """
    x = np.sort(np.asarray(tail_sample, dtype=float))
    n = x.size
    if n < config.GPD_MIN_TAIL:
        raise TooFewTailSamples(f"{n} exceedance(s); the GPD fit needs {config.GPD_MIN_TAIL}")
    if x[-1] <= 0.0:
        raise AllEqualTail("all exceedances are zero")
    if x[0] == x[-1]:
        return -1.0, float(x[-1])

    m_est = 30 + int(n ** 0.5)
    b_ary = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    quartile = x[max(int(n / 4 + 0.5) - 1, 0)]
    if quartile <= 0.0:
        quartile = x[x > 0][0]
    b_ary /= config.GPD_PRIOR_BS * quartile
    b_ary += 1.0 / x[-1]

    k_ary = np.log1p(-b_ary[:, None] * x).mean(axis=1)
    profile = n * (np.log(-(b_ary / k_ary)) - k_ary - 1.0)
    weights = 1.0 / np.exp(profile - profile[:, None]).sum(axis=1)
    keep = weights >= 10 * np.finfo(float).eps
    weights, b_ary = weights[keep], b_ary[keep]
    weights /= weights.sum()

    b_post = float(np.sum(b_ary * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    k_post = (n * k_post + config.GPD_PRIOR_K * 0.5) / (n + config.GPD_PRIOR_K)
    sigma = -k_post / b_post
    return k_post, float(sigma)


def _gpd_quantile(probs: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-probs)
    return sigma * np.expm1(-k * np.log1p(-probs)) / k


def psis_smooth(log_ratios: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Pareto-smooth one observation's log importance ratios.

    The largest M = ceil(min(0.2 S, 3 sqrt S)) ratios are replaced by the
    expected order statistics of a GPD fitted to their exceedances over
    the (M + 1)-th largest; smoothed values are truncated at the largest
    raw ratio.

    Returns:
        (smoothed log weights, pareto k); k is -inf when the tail is flat and
        +inf when it is too short to fit (weights then stay unsmoothed)
    """
    x = np.asarray(log_ratios, dtype=float) - np.max(log_ratios)
    n_draws = x.size
    tail_len = int(math.ceil(min(0.2 * n_draws, 3.0 * math.sqrt(n_draws))))
    order = np.argsort(x, kind="stable")
    if tail_len >= n_draws:
        tail_len = n_draws - 1
    tail_idx = order[-tail_len:]
    cutoff = x[order[-tail_len - 1]]
    exceedances = np.exp(x[tail_idx]) - np.exp(cutoff)
    try:
        k, sigma = fit_generalized_pareto(exceedances)
    except AllEqualTail:
        return x, -np.inf
    except TooFewTailSamples:
        return x, np.inf
    if np.ptp(exceedances) == 0.0:
        return x, k
    probs = (np.arange(1, tail_len + 1) - 0.5) / tail_len
    smoothed = x.copy()
    smoothed[tail_idx] = np.log(_gpd_quantile(probs, k, sigma) + np.exp(cutoff))
    smoothed[smoothed > 0.0] = 0.0
    return smoothed, k


@dataclass
class LooResult:
    """PSIS leave-one-out estimate; looic = -2 * elpd_loo."""
    elpd_loo: float
    looic: float
    pareto_k: np.ndarray
    n_bad_k: int
    se: float
    p_loo: float
    pointwise: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "elpd_loo": self.elpd_loo,
            "looic": self.looic,
            "looic_se": self.se,
            "p_loo": self.p_loo,
            "n_bad_k": self.n_bad_k,
            "max_pareto_k": float(np.max(self.pareto_k)) if self.pareto_k.size else None,
        }


def psis_loo(loglik_pointwise: np.ndarray) -> LooResult:
    """
    Pareto-smoothed importance-sampling leave-one-out cross-validation.

    Raises:
        DegenerateDraws: fewer than 2 draws or non-finite entries
    """
    loglik = _as_draw_matrix(loglik_pointwise)
    n_draws, n_obs = loglik.shape
    warnings = []
    if n_draws < config.PSIS_MIN_DRAWS:
        message = f"PSIS-LOO on {n_draws} draws; at least {config.PSIS_MIN_DRAWS} are recommended"
        logger.warning(message)
        warnings.append(message)

    elpd_i = np.empty(n_obs)
    pareto_k = np.empty(n_obs)
    for i in range(n_obs):
        log_weights, pareto_k[i] = psis_smooth(-loglik[:, i])
        elpd_i[i] = logsumexp(log_weights + loglik[:, i]) - logsumexp(log_weights)

    n_bad = int(np.sum(pareto_k > config.PSIS_BAD_K))
    if n_bad:
        message = f"{n_bad} observation(s) have pareto k above {config.PSIS_BAD_K}"
        logger.warning(message)
        warnings.append(message)
    lppd = float((logsumexp(loglik, axis=0) - np.log(n_draws)).sum())
    elpd = float(elpd_i.sum())
    return LooResult(
        elpd_loo=elpd,
        looic=-2.0 * elpd,
        pareto_k=pareto_k,
        n_bad_k=n_bad,
        se=float(2.0 * np.sqrt(n_obs * np.var(elpd_i))),
        p_loo=lppd - elpd,
        pointwise=elpd_i,
        warnings=warnings,
    )


@dataclass
class ModelFit:
    """Criteria of one fitted model, tied to its dataset fingerprint."""
    label: str
    waic: WaicResult
    loo: LooResult
    fingerprint: str = ""


@dataclass
class ComparisonRow:
    label: str
    waic: float
    looic: float
    waic_se: float
    looic_se: float
    d_waic: float
    d_looic: float
    p_waic: float
    p_loo: float
    n_bad_k: int


@dataclass
class ComparisonReport:
    """Models ranked by ascending WAIC."""
    rows: List[ComparisonRow]
    best_by_waic: str
    best_by_loo: str

    @property
    def labels(self) -> List[str]:
        return [row.label for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([row.__dict__ for row in self.rows])
        frame["best_waic"] = frame["label"] == self.best_by_waic
        frame["best_loo"] = frame["label"] == self.best_by_loo
        return frame


def compare_models(fits: Sequence[Union[ModelFit, Tuple[str, WaicResult, LooResult]]]) -> ComparisonReport:
    """
    Rank fits by WAIC; ties go to the lower LOOIC, then to input order.

    Raises:
        InsufficientModels: fewer than 2 fits
        MismatchedDataset: fits were computed on different datasets
    """
    fits = [fit if isinstance(fit, ModelFit) else ModelFit(*fit) for fit in fits]
    if len(fits) < 2:
        raise InsufficientModels(f"comparison needs at least 2 fits, got {len(fits)}")
    fingerprints = {fit.fingerprint for fit in fits if fit.fingerprint}
    if len(fingerprints) > 1 or (fingerprints and any(not fit.fingerprint for fit in fits)):
        raise MismatchedDataset("fits were computed on different datasets")
    labels = [fit.label for fit in fits]
    if len(set(labels)) != len(labels):
        raise InsufficientModels("fit labels must be distinct")

    ranked = sorted(enumerate(fits), key=lambda item: (item[1].waic.waic, item[1].loo.looic, item[0]))
    by_loo = min(enumerate(fits), key=lambda item: (item[1].loo.looic, item[1].waic.waic, item[0]))[1]
    best_waic = ranked[0][1].waic.waic
    rows = [
        ComparisonRow(
            label=fit.label,
            waic=fit.waic.waic,
            looic=fit.loo.looic,
            waic_se=fit.waic.se,
            looic_se=fit.loo.se,
            d_waic=fit.waic.waic - best_waic,
            d_looic=fit.loo.looic - by_loo.loo.looic,
            p_waic=fit.waic.p_waic,
            p_loo=fit.loo.p_loo,
            n_bad_k=fit.loo.n_bad_k,
        )
        for _, fit in ranked
    ]
    return ComparisonReport(rows=rows, best_by_waic=rows[0].label, best_by_loo=by_loo.label)


@dataclass
class FitReport:
    """
    Everything a fitted model reports.

    fixed holds coefficient summaries, random_sd the random-effect standard
    deviations (sqrt of the variance draws) and group_effects the per-group
    deviations.
    """
    label: str
    response_name: str
    mode: str
    fixed: List[ParameterSummary]
    random_sd: List[ParameterSummary]
    group_effects: List[ParameterSummary]
    waic: WaicResult
    loo: LooResult
    n_draws: int
    n_obs: int

    @property
    def summaries(self) -> List[ParameterSummary]:
        return self.fixed + self.random_sd + self.group_effects

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.to_dict() for s in self.summaries])


def _sd_name(variance_name: str) -> str:
    if variance_name == "sigma0_sq":
        return "sd(Intercept)"
    if variance_name == "tau_sq":
        return "sd(crash type)"
    return "sd" + variance_name[len("sigma_sq"):].replace("[", "(", 1)[:-1] + ")"


def build_fit_report(draws, label: str = "", response_name: str = "", mode: str = "",
                     prob: float = config.BCI_PROB) -> FitReport:
    """Summaries and criteria of one fit."""
    summaries = summarize(draws, prob)
    pooled = draws.pooled()
    fixed, random_sd, group_effects = [], [], []
    for summary in summaries:
        if summary.kind == "fixed":
            fixed.append(summary)
        elif summary.kind == "random":
            group_effects.append(summary)
        else:
            col = draws.param_names.index(summary.name)
            random_sd.append(summarize_samples(_sd_name(summary.name), np.sqrt(pooled[:, col]), prob, "sd"))
    return FitReport(
        label=label or draws.label,
        response_name=response_name,
        mode=mode,
        fixed=fixed,
        random_sd=random_sd,
        group_effects=group_effects,
        waic=waic(draws.loglik_pointwise),
        loo=psis_loo(draws.loglik_pointwise),
        n_draws=pooled.shape[0],
        n_obs=draws.loglik_pointwise.shape[-1],
    )


def odds_ratio_density(draws, summaries: Sequence[ParameterSummary], n_points: int = 101) -> pd.DataFrame:
    """
    Kernel density of each coefficient's odds-ratio draws on an even grid,
    alongside its OR and interval, for forest and density plots.
    """
    pooled = draws.pooled()
    frames = []
    for summary in summaries:
        or_draws = np.exp(pooled[:, draws.param_names.index(summary.name)])
        low, high = np.quantile(or_draws, [0.005, 0.995], method=config.QUANTILE_METHOD)
        grid = np.linspace(low, high, n_points)
        try:
            density = gaussian_kde(or_draws)(grid)
        except (np.linalg.LinAlgError, ValueError):
            grid, density = np.array([low]), np.array([np.nan])
        frames.append(pd.DataFrame({
            "parameter": summary.name,
            "odds_ratio": summary.odds_ratio,
            "or_low": summary.or_low,
            "or_high": summary.or_high,
            "or_value": grid,
            "density": density,
        }))
    columns = ["parameter", "odds_ratio", "or_low", "or_high", "or_value", "density"]
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]
