"""
Tests for posterior summaries and model criteria

Tests:
1. Odds ratios and effect magnitudes
2. WAIC against a brute-force computation
3. Generalized Pareto fit and PSIS smoothing
4. Model comparison ranking and guards
5. Fit reports and odds-ratio densities
"""

import math

import numpy as np
import pytest
from scipy.stats import genpareto

from src.core.errors import (
    AllEqualTail,
    DegenerateDraws,
    InsufficientDraws,
    InsufficientModels,
    MismatchedDataset,
    TooFewTailSamples,
)
from src.core.evaluation import (
    LooResult,
    ModelFit,
    WaicResult,
    build_fit_report,
    compare_models,
    effect_magnitude,
    fit_generalized_pareto,
    odds_ratio,
    odds_ratio_density,
    psis_loo,
    psis_smooth,
    summarize,
    summarize_samples,
    waic,
)
from src.core.sampler import PosteriorDraws


def _fit(label, waic_value, looic, fingerprint="rows"):
    return ModelFit(
        label=label,
        waic=WaicResult(lppd=-waic_value / 2, p_waic=0.0, waic=waic_value, se=1.0),
        loo=LooResult(elpd_loo=-looic / 2, looic=looic, pareto_k=np.zeros(3), n_bad_k=0, se=1.0, p_loo=0.0),
        fingerprint=fingerprint,
    )


def _hierarchical_draws(seed=0, chains=2, iterations=100):
    rng = np.random.default_rng(seed)
    names = ["(Intercept)", "x0[1]", "mu0[g0]", "mu0[g1]", "sigma0_sq", "sigma_sq[x0[1]]", "tau_sq"]
    kinds = ["fixed", "fixed", "random", "random", "variance", "variance", "variance"]
    values = rng.normal(size=(chains, iterations, len(names)))
    values[:, :, 1] += 0.45
    values[:, :, 4:] = rng.gamma(2.0, 0.5, size=(chains, iterations, 3))
    return PosteriorDraws(
        draws=values,
        param_names=names,
        param_kinds=kinds,
        loglik_pointwise=np.log(rng.uniform(0.2, 0.8, size=(chains, iterations, 6))),
        logpost=np.zeros((chains, iterations)),
        accept_rates=[{} for _ in range(chains)],
        label="ri",
    )


class TestOddsRatio:
    def test_odds_ratio_and_effect(self):
        assert odds_ratio(0.45) == pytest.approx(1.568312, abs=1e-6)
        assert effect_magnitude(odds_ratio(0.45)) == pytest.approx(56.8312, abs=1e-4)
        assert round(effect_magnitude(1.57)) == 57
        assert effect_magnitude(0.5) == pytest.approx(-50.0)

    def test_effect_from_summary(self):
        summary = summarize_samples("x", np.full(10, math.log(2.0)))
        assert effect_magnitude(summary) == pytest.approx(100.0)


class TestSummaries:
    """Posterior summaries of pooled draws."""

    def test_type7_interval(self):
        summary = summarize_samples("x", np.arange(101, dtype=float))
        assert summary.estimate == 50.0
        assert summary.bci_low == pytest.approx(2.5)
        assert summary.bci_high == pytest.approx(97.5)
        assert summary.significant
        assert summary.or_low == pytest.approx(math.exp(2.5))

    def test_interval_covering_zero_is_not_significant(self):
        summary = summarize_samples("x", np.linspace(-1.0, 1.0, 201))
        assert not summary.significant
        assert summary.estimate == pytest.approx(0.0, abs=1e-12)

    def test_summarize_selected_names(self):
        (summary,) = summarize(_hierarchical_draws(), names=["x0[1]"])
        assert summary.name == "x0[1]"
        assert summary.kind == "fixed"

    def test_too_few_draws(self):
        with pytest.raises(InsufficientDraws):
            summarize(_hierarchical_draws(iterations=40))


class TestWaic:
    """WAIC values."""

    def test_matches_brute_force(self):
        loglik = np.log(np.random.default_rng(7).uniform(0.05, 0.95, size=(3, 5)))
        lppd = sum(math.log(sum(math.exp(v) for v in loglik[:, i]) / 3) for i in range(5))
        p_waic = 0.0
        for i in range(5):
            column = loglik[:, i]
            mean = sum(column) / 3
            p_waic += sum((v - mean) ** 2 for v in column) / 2
        result = waic(loglik)
        assert result.lppd == pytest.approx(lppd, abs=1e-10)
        assert result.p_waic == pytest.approx(p_waic, abs=1e-10)
        assert result.waic == pytest.approx(-2 * (lppd - p_waic), abs=1e-10)

    def test_identical_draws(self):
        result = waic(np.full((10, 1), math.log(0.5)))
        assert result.p_waic == 0.0
        assert result.waic == pytest.approx(1.386294, abs=1e-6)

    def test_accepts_chain_axis(self):
        loglik = np.log(np.random.default_rng(8).uniform(0.1, 0.9, size=(2, 20, 4)))
        assert waic(loglik).waic == pytest.approx(waic(loglik.reshape(40, 4)).waic)

    @pytest.mark.parametrize("loglik", [np.zeros((1, 3)), np.array([[0.0, np.nan], [0.0, 0.0]])])
    def test_degenerate(self, loglik):
        with pytest.raises(DegenerateDraws):
            waic(loglik)

    def test_duplicated_observations_add_up(self):
        loglik = np.log(np.random.default_rng(9).uniform(0.1, 0.9, size=(200, 6)))
        single, double = waic(loglik), waic(np.hstack([loglik, loglik]))
        assert double.lppd == pytest.approx(2 * single.lppd, rel=1e-12)
        assert double.p_waic == pytest.approx(2 * single.p_waic, rel=1e-12)
        assert double.waic == pytest.approx(2 * single.waic, rel=1e-12)

    def test_constant_shift_keeps_ranking(self):
        rng = np.random.default_rng(10)
        logliks = {
            "narrow": np.log(rng.uniform(0.4, 0.9, size=(400, 8))),
            "wide": np.log(rng.uniform(0.05, 0.95, size=(400, 8))),
            "low": np.log(rng.uniform(0.1, 0.5, size=(400, 8))),
        }
        shift = -0.75

        def fits(offset):
            return [ModelFit(label, waic(values + offset), psis_loo(values + offset))
                    for label, values in logliks.items()]

        base, shifted = compare_models(fits(0.0)), compare_models(fits(shift))
        assert shifted.labels == base.labels
        assert shifted.best_by_loo == base.best_by_loo
        for before, after in zip(fits(0.0), fits(shift)):
            assert after.waic.lppd == pytest.approx(before.waic.lppd + 8 * shift, rel=1e-10)
            assert after.waic.p_waic == pytest.approx(before.waic.p_waic, rel=1e-10)
            assert after.loo.elpd_loo == pytest.approx(before.loo.elpd_loo + 8 * shift, rel=1e-10)


class TestGeneralizedPareto:
    """Shape recovery and degenerate tails."""

    @pytest.mark.parametrize("k, tolerance", [(0.5, 0.1), (0.0, 0.1), (0.7, 0.15)])
    def test_recovers_shape(self, k, tolerance):
        sample = genpareto.rvs(c=k, scale=1.0, size=2000, random_state=np.random.default_rng(10))
        k_hat, sigma_hat = fit_generalized_pareto(sample)
        assert k_hat == pytest.approx(k, abs=tolerance)
        assert sigma_hat == pytest.approx(1.0, rel=0.2)

    def test_all_zero_tail(self):
        with pytest.raises(AllEqualTail):
            fit_generalized_pareto(np.zeros(10))

    def test_short_tail(self):
        with pytest.raises(TooFewTailSamples):
            fit_generalized_pareto(np.array([0.1, 0.2, 0.3]))

    def test_constant_tail(self):
        assert fit_generalized_pareto(np.full(8, 2.0)) == (-1.0, 2.0)


class TestPsis:
    def test_smoothed_weights_truncated(self):
        log_ratios = np.random.default_rng(11).standard_t(3, size=1000)
        smoothed, k = psis_smooth(log_ratios)
        assert smoothed.max() <= 0.0
        assert np.isfinite(k)

    def test_flat_ratios(self):
        smoothed, k = psis_smooth(np.zeros(100))
        assert k == -np.inf
        np.testing.assert_array_equal(smoothed, 0.0)

    def test_too_few_draws_for_tail(self):
        _, k = psis_smooth(np.array([0.0, 1.0]))
        assert k == np.inf

    def test_constant_loglik(self):
        result = psis_loo(np.full((200, 3), math.log(0.5)))
        assert result.elpd_loo == pytest.approx(3 * math.log(0.5))
        assert result.looic == pytest.approx(-6 * math.log(0.5))
        assert result.n_bad_k == 0
        assert result.p_loo == pytest.approx(0.0, abs=1e-12)

    def test_few_draws_warn(self):
        result = psis_loo(np.log(np.random.default_rng(12).uniform(0.2, 0.8, size=(50, 2))))
        assert any("recommended" in message for message in result.warnings)


class TestCompareModels:
    """Ranking fits by WAIC."""

    def test_ranking(self):
        report = compare_models([_fit("a", 74.4, 75.0), _fit("b", 64.5, 65.0), _fit("c", 62.8, 63.5)])
        assert report.labels == ["c", "b", "a"]
        assert report.best_by_waic == "c"
        assert report.best_by_loo == "c"
        assert [round(row.d_waic, 6) for row in report.rows] == [0.0, 1.7, 11.6]

    def test_tie_broken_by_looic(self):
        report = compare_models([_fit("a", 50.0, 52.0), _fit("b", 50.0, 51.0)])
        assert report.best_by_waic == "b"

    def test_criteria_may_disagree(self):
        report = compare_models([_fit("a", 50.0, 49.0), _fit("b", 49.0, 51.0)])
        assert report.best_by_waic == "b"
        assert report.best_by_loo == "a"

    def test_needs_two_fits(self):
        with pytest.raises(InsufficientModels):
            compare_models([_fit("a", 1.0, 1.0)])

    def test_duplicate_labels(self):
        with pytest.raises(InsufficientModels):
            compare_models([_fit("a", 1.0, 1.0), _fit("a", 2.0, 2.0)])

    def test_mismatched_datasets(self):
        with pytest.raises(MismatchedDataset):
            compare_models([_fit("a", 1.0, 1.0, "x"), _fit("b", 2.0, 2.0, "y")])

    def test_frame_marks_best(self):
        frame = compare_models([_fit("a", 2.0, 2.0), _fit("b", 1.0, 1.0)]).to_frame()
        assert frame.loc[frame["label"] == "b", "best_waic"].item()


class TestFitReport:
    def test_groups_summaries(self):
        report = build_fit_report(_hierarchical_draws(), response_name="injury", mode="Autonomous")
        assert [s.name for s in report.fixed] == ["(Intercept)", "x0[1]"]
        assert [s.name for s in report.random_sd] == ["sd(Intercept)", "sd(x0[1])", "sd(crash type)"]
        assert [s.name for s in report.group_effects] == ["mu0[g0]", "mu0[g1]"]
        assert report.label == "ri"
        assert report.n_draws == 200
        assert report.n_obs == 6

    def test_sd_is_root_of_variance(self):
        draws = _hierarchical_draws()
        report = build_fit_report(draws)
        expected = np.sqrt(draws.pooled()[:, draws.param_names.index("sigma0_sq")]).mean()
        assert report.random_sd[0].estimate == pytest.approx(expected)

    def test_density_frame(self):
        draws = _hierarchical_draws()
        report = build_fit_report(draws)
        frame = odds_ratio_density(draws, report.fixed, n_points=21)
        assert len(frame) == 2 * 21
        assert (frame["density"] >= 0).all()
        assert set(frame["parameter"]) == {"(Intercept)", "x0[1]"}
