"""
Synthetic data from known hierarchical parameters, plus small exact oracles
(grid posterior, grid leave-one-out) that validate the sampler and criteria.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import expit

import config
from src.core.dataset import CodedDataset, Nesting
from src.core.errors import InvalidModelSpec, RangeTooNarrow, UsageError
from src.core.evaluation import ModelFit, compare_models, psis_loo, summarize, waic
from src.core.file_handler import read_yaml
from src.core.model import (
    HierarchicalModelSpec,
    ParameterVector,
    PriorConfig,
    Structure,
    linear_predictor,
    log_posterior,
)
from src.core.sampler import McmcConfig, chain_seed, make_generator, run_mcmc

logger = logging.getLogger(__name__)

SYNTH_LEVEL = "1"


@dataclass
class TruthScenario:
    """
    Known parameters to simulate from.

    true_params holds the population coefficients and variance components;
    group deviations are drawn at generation time.
    """
    spec: HierarchicalModelSpec
    true_params: ParameterVector
    J: int
    n_per_group: int
    seed: int
    label: str = ""

    def __post_init__(self):
        if self.J < 2:
            raise InvalidModelSpec(f"scenario needs at least 2 groups, got {self.J}")
        if self.n_per_group < 1:
            raise InvalidModelSpec("n_per_group must be at least 1")
        if self.spec.nesting is not Nesting.TWO_LEVEL_VEHICLE_UNIT:
            raise InvalidModelSpec("synthetic scenarios use a single level-2 grouping")
        params = self.true_params
        if len(params.gamma_p0) != len(self.spec.fixed_terms):
            raise InvalidModelSpec("gamma_p0 needs one value per fixed term")
        if len(params.gamma_0q) != len(self.spec.level2_terms):
            raise InvalidModelSpec("gamma_0q needs one value per level-2 term")
        if self.spec.has_random_intercept and params.sigma0_sq is None:
            raise InvalidModelSpec("a random-intercept scenario needs sigma0")
        if len(params.sigma_k_sq) != len(self.spec.random_slope_terms):
            raise InvalidModelSpec("sigma_k needs one value per random slope term")
        if (params.variances() <= 0).any():
            raise InvalidModelSpec("true variances must be positive")

    @property
    def n_rows(self) -> int:
        return self.J * self.n_per_group

    @classmethod
    def from_dict(cls, document: Dict) -> "TruthScenario":
        try:
            spec = HierarchicalModelSpec.from_dict(document["model"])
            truth = document.get("truth") or {}
            sigma0 = truth.get("sigma0")
            params = ParameterVector(
                gamma00=float(truth.get("gamma00", 0.0)),
                gamma_p0=np.asarray(truth.get("gamma_p0") or [], dtype=float),
                gamma_0q=np.asarray(truth.get("gamma_0q") or [], dtype=float),
                gamma_pq=np.zeros((len(spec.fixed_terms), len(spec.level2_terms))),
                mu0=np.zeros(0),
                mu_p=np.zeros((0, 0)),
                sigma0_sq=None if sigma0 is None else float(sigma0) ** 2,
                sigma_k_sq=np.asarray(truth.get("sigma_k") or [], dtype=float) ** 2,
            )
            return cls(
                spec=spec,
                true_params=params,
                J=int(document["groups"]),
                n_per_group=int(document["n_per_group"]),
                seed=int(document.get("seed", config.MCMC_SEED)),
                label=str(document.get("label", spec.label)),
            )
        except KeyError as exc:
            raise InvalidModelSpec(f"scenario is missing {exc}") from None

    @classmethod
    def from_yaml(cls, path) -> "TruthScenario":
        return cls.from_dict(read_yaml(path, "scenario"))

    def with_seed(self, seed: int) -> "TruthScenario":
        return replace(self, seed=seed)


def _balanced_column(n: int, rng: np.random.Generator) -> np.ndarray:
    column = np.zeros(n)
    column[: n // 2] = 1.0
    return rng.permutation(column)


def draw_synthetic(scenario: TruthScenario) -> Tuple[CodedDataset, ParameterVector]:
    """
    Simulate one dataset and return it with the realized parameters.

    Draw order from the scenario seed: fixed columns, level-2 columns,
    intercept deviations, slope deviations, responses.
    """
    rng = make_generator(scenario.seed)
    spec, truth = scenario.spec, scenario.true_params
    J, n = scenario.J, scenario.n_rows
    group = np.repeat(np.arange(J), scenario.n_per_group)

    X = np.column_stack([_balanced_column(n, rng) for _ in spec.fixed_terms]) if spec.fixed_terms \
        else np.zeros((n, 0))
    if spec.level2_terms:
        Z = np.column_stack([_balanced_column(J, rng)[group] for _ in spec.level2_terms])
    else:
        Z = np.zeros((n, 0))

    gamma00 = float(np.clip(truth.gamma00, -config.SYNTH_ETA_CAP, config.SYNTH_ETA_CAP))
    if gamma00 != truth.gamma00:
        logger.warning("gamma00=%g capped at %g", truth.gamma00, gamma00)
    mu0 = rng.normal(0.0, np.sqrt(truth.sigma0_sq), J) if spec.has_random_intercept else np.zeros(0)
    mu_p = np.array([rng.normal(0.0, np.sqrt(v), J) for v in truth.sigma_k_sq]).reshape(len(truth.sigma_k_sq), J)

    data = CodedDataset(
        response=np.zeros(n, dtype=np.int64),
        fixed_design=X,
        level2_design=Z,
        group_index_l2=group,
        column_names=[f"{term}[{SYNTH_LEVEL}]" for term in spec.fixed_terms],
        level2_names=[f"{term}[{SYNTH_LEVEL}]" for term in spec.level2_terms],
        group_labels_l2=[f"g{j:03d}" for j in range(J)],
        response_name=spec.response_name,
        row_ids=[str(i) for i in range(n)],
    )
    realized = replace(truth, gamma00=gamma00, mu0=mu0, mu_p=mu_p,
                       gamma_pq=np.zeros((len(spec.fixed_terms), len(spec.level2_terms))))
    prediction = linear_predictor(spec, realized, data)
    data.response = (rng.uniform(size=n) < prediction.pi).astype(np.int64)
    return data.validate(), realized


def generate_synthetic(scenario: TruthScenario) -> CodedDataset:
    """Simulate a coded dataset; fully determined by the scenario."""
    return draw_synthetic(scenario)[0]


def intercept_only_dataset(response: Sequence[int], response_name: str = "y") -> CodedDataset:
    """
    A dataset whose only free coefficient is the intercept.

    Rows alternate between two nominal groups so the dataset is valid for
    any structure; an empty response gives an empty dataset.
    """
    y = np.asarray(response, dtype=np.int64)
    n = y.size
    return CodedDataset(
        response=y,
        fixed_design=np.zeros((n, 0)),
        level2_design=np.zeros((n, 0)),
        group_index_l2=np.arange(n, dtype=np.int64) % 2,
        column_names=[],
        level2_names=[],
        group_labels_l2=["a", "b"],
        response_name=response_name,
        row_ids=[str(i) for i in range(n)],
    ).validate(allow_empty=True)


@dataclass
class GridPosterior:
    """Quadrature reference for a one-parameter posterior."""
    grid_points: np.ndarray
    unnormalized_logdensity: np.ndarray
    normalized_density: np.ndarray
    mean: float
    sd: float

    @property
    def step(self) -> float:
        return float(self.grid_points[1] - self.grid_points[0])

    def sample(self, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        """Independent draws by inverting the trapezoid CDF."""
        cdf = cumulative_trapezoid(self.normalized_density, self.grid_points, initial=0.0)
        cdf /= cdf[-1]
        return np.interp(rng.uniform(size=n_draws), cdf, self.grid_points)


def grid_posterior_oracle(
    data: CodedDataset,
    prior: PriorConfig = PriorConfig(),
    bounds: Tuple[float, float] = (-50.0, 50.0),
    step: float = 0.01,
) -> GridPosterior:
    """
    Posterior of the intercept of a fixed-effects-only model by quadrature.

    Raises:
        UsageError: data has other coefficients, or the grid is malformed
        RangeTooNarrow: more than 1e-4 of the mass may lie outside the grid
    """
    if data.n_fixed or data.n_level2:
        raise UsageError("the grid oracle handles a single free coefficient (intercept only)")
    lo, hi = bounds
    if not step > 0 or not hi > lo:
        raise UsageError(f"invalid grid [{lo}, {hi}] with step {step}")
    spec = HierarchicalModelSpec(response_name=data.response_name, structure=Structure.FIXED_ONLY, priors=prior)
    grid = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    template = ParameterVector(
        gamma00=0.0, gamma_p0=np.zeros(0), gamma_0q=np.zeros(0), gamma_pq=np.zeros((0, 0)),
        mu0=np.zeros(0), mu_p=np.zeros((0, 0)),
    )
    logd = np.array([log_posterior(spec, replace(template, gamma00=float(g)), data) for g in grid])
    density = np.exp(logd - logd.max())
    density /= trapezoid(density, grid)
    mean = float(trapezoid(grid * density, grid))
    sd = float(np.sqrt(trapezoid((grid - mean) ** 2 * density, grid)))
    outside = (density[0] + density[-1]) * sd
    if outside > config.GRID_MASS_TOL:
        raise RangeTooNarrow(f"grid [{lo}, {hi}] leaves about {outside:.2e} of the mass outside")
    return GridPosterior(grid_points=grid, unnormalized_logdensity=logd, normalized_density=density,
                         mean=mean, sd=sd)


def exact_loo_by_grid(
    data: CodedDataset,
    prior: PriorConfig = PriorConfig(),
    bounds: Tuple[float, float] = (-50.0, 50.0),
    step: float = 0.01,
) -> np.ndarray:
    """
    Leave-one-out log predictive density of each row: refit the grid
    posterior without the row and integrate its likelihood.
    """
    y = data.response
    scores = np.empty(y.size)
    for i in range(y.size):
        held_out = intercept_only_dataset(np.delete(y, i), data.response_name)
        posterior = grid_posterior_oracle(held_out, prior, bounds, step)
        p_one = expit(posterior.grid_points)
        likelihood = p_one if y[i] == 1 else 1.0 - p_one
        scores[i] = np.log(trapezoid(likelihood * posterior.normalized_density, posterior.grid_points))
    return scores


def intercept_loglik_matrix(draws: np.ndarray, response: np.ndarray) -> np.ndarray:
    """(S, n) pointwise log-likelihood of intercept draws."""
    eta = np.asarray(draws, dtype=float)[:, None]
    return np.where(np.asarray(response)[None, :] == 1, -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta))


def batch_means_se(samples: np.ndarray, n_batches: int = 50) -> float:
    """Monte-Carlo standard error of a mean from non-overlapping batch means."""
    samples = np.asarray(samples, dtype=float).ravel()
    size = samples.size // n_batches
    if size < 1:
        raise UsageError(f"{samples.size} samples cannot form {n_batches} batches")
    means = samples[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def _replication_mcmc(mcmc: McmcConfig, replication: int) -> McmcConfig:
    return replace(mcmc, seed=chain_seed(mcmc.seed, 1000 + replication))


@dataclass
class CoverageResult:
    """Credible-interval coverage of one parameter across replications."""
    parameter: str
    truth: float
    intervals: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def covered(self) -> int:
        return sum(1 for low, high in self.intervals if low <= self.truth <= high)

    @property
    def n_replications(self) -> int:
        return len(self.intervals)

    @property
    def rate(self) -> float:
        return self.covered / self.n_replications if self.intervals else float("nan")


def coverage_experiment(
    scenario: TruthScenario,
    mcmc: McmcConfig,
    n_replications: int = 20,
    parameter: str = "(Intercept)",
    prob: float = config.BCI_PROB,
    jobs: int = 1,
) -> CoverageResult:
    """Fit n seeded replications of a scenario and record whether each BCI covers the truth."""
    if parameter != "(Intercept)":
        truth = float(scenario.true_params.gamma_p0[list(scenario.spec.fixed_terms).index(
            parameter.split("[")[0])])
    else:
        truth = float(np.clip(scenario.true_params.gamma00, -config.SYNTH_ETA_CAP, config.SYNTH_ETA_CAP))
    result = CoverageResult(parameter=parameter, truth=truth)
    for r in range(n_replications):
        data = generate_synthetic(scenario.with_seed(chain_seed(scenario.seed, r)))
        draws = run_mcmc(scenario.spec, data, _replication_mcmc(mcmc, r), jobs=jobs)
        (summary,) = summarize(draws, prob, names=[parameter])
        result.intervals.append((summary.bci_low, summary.bci_high))
        logger.info("replication %d/%d: [%.3f, %.3f] vs truth %.3f",
                    r + 1, n_replications, summary.bci_low, summary.bci_high, truth)
    return result


@dataclass
class SelectionResult:
    """Which structure won WAIC in each replication."""
    structures: List[str]
    winners: List[str] = field(default_factory=list)
    waic_values: List[Dict[str, float]] = field(default_factory=list)

    def wins(self) -> Dict[str, int]:
        return {s: self.winners.count(s) for s in self.structures}


def structure_selection_experiment(
    scenario: TruthScenario,
    mcmc: McmcConfig,
    n_replications: int = 10,
    structures: Optional[Sequence[Structure]] = None,
    jobs: int = 1,
) -> SelectionResult:
    """Fit every structure to seeded replications and rank them by WAIC."""
    structures = list(structures or Structure)
    result = SelectionResult(structures=[s.value for s in structures])
    for r in range(n_replications):
        data = generate_synthetic(scenario.with_seed(chain_seed(scenario.seed, r)))
        fits = []
        for structure in structures:
            spec = scenario.spec.with_structure(structure, label=structure.value)
            draws = run_mcmc(spec, data, _replication_mcmc(mcmc, r), jobs=jobs)
            fits.append(ModelFit(spec.label, waic(draws.loglik_pointwise), psis_loo(draws.loglik_pointwise),
                                 draws.fingerprint))
        report = compare_models(fits)
        result.winners.append(report.best_by_waic)
        result.waic_values.append({row.label: row.waic for row in report.rows})
        logger.info("replication %d/%d: best by WAIC %s", r + 1, n_replications, report.best_by_waic)
    return result
