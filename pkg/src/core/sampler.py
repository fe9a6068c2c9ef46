"""
Blocked adaptive random-walk Metropolis with multiple chains.

Random numbers come from numpy's PCG64 generator. Chain c of a run with
master seed s is seeded with splitmix64(s + (c + 1) * 0x9E3779B97F4A7C15
mod 2**64), so traces are reproducible across implementations that follow
the same generator spec.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

import config
from src.core.errors import InsufficientDraws, NonFiniteLogPosterior, StuckChain, UsageError
from src.core.model import PosteriorTarget

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
RWM_SCALE = 2.38


def splitmix64(value: int) -> int:
    """One SplitMix64 output for state `value` (state advanced by GOLDEN_GAMMA first)."""
    z = (value + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def chain_seed(master_seed: int, chain: int) -> int:
    """Deterministic per-chain seed mixed from the master seed."""
    return splitmix64((master_seed + (chain + 1) * GOLDEN_GAMMA) & MASK64)


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = config.MCMC_N_CHAINS
    n_burnin: int = config.MCMC_N_BURNIN
    n_keep: int = config.MCMC_N_KEEP
    seed: int = config.MCMC_SEED
    adapt_window: int = config.MCMC_ADAPT_WINDOW
    target_accept: float = config.MCMC_TARGET_ACCEPT
    fail_on_stuck: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise UsageError("n_chains must be at least 1")
        if self.n_keep < 1:
            raise UsageError("n_keep must be at least 1")
        if self.n_burnin < 0:
            raise UsageError("n_burnin must be non-negative")
        if self.adapt_window < 1:
            raise UsageError("adapt_window must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise UsageError("target_accept must lie in (0, 1)")
        if not 0 <= self.seed <= MASK64:
            raise UsageError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, document: Optional[Dict]) -> "McmcConfig":
        document = dict(document or {})
        known = {"n_chains", "n_burnin", "n_keep", "seed", "adapt_window", "target_accept", "fail_on_stuck"}
        unknown = set(document) - known
        if unknown:
            raise UsageError(f"unknown mcmc setting(s) {sorted(unknown)}")
        settings = {k: int(v) for k, v in document.items() if k not in ("target_accept", "fail_on_stuck")}
        if "target_accept" in document:
            settings["target_accept"] = float(document["target_accept"])
        if "fail_on_stuck" in document:
            settings["fail_on_stuck"] = bool(document["fail_on_stuck"])
        return cls(**settings)

    def to_dict(self) -> Dict:
        return {
            "n_chains": self.n_chains,
            "n_burnin": self.n_burnin,
            "n_keep": self.n_keep,
            "seed": self.seed,
            "adapt_window": self.adapt_window,
            "target_accept": self.target_accept,
            "fail_on_stuck": self.fail_on_stuck,
        }


@dataclass
class ChainResult:
    """
    Kept draws of one chain.

    Attributes:
        draws: (n_keep, D) natural-scale parameters
        loglik: (n_keep, n) pointwise log-likelihood
        logpost: (n_keep,) unconstrained log density
        accept_rates: block name -> mean acceptance over kept iterations
        scale_trace: (n_keep, total sub-blocks) proposal scales in force
        warnings: reported, non-fatal conditions
    """
    seed: int
    draws: np.ndarray
    loglik: np.ndarray
    logpost: np.ndarray
    accept_rates: Dict[str, float]
    scale_trace: np.ndarray
    warnings: List[str] = field(default_factory=list)


class _BlockState:
    """Proposal state of one block: per-sub-block scales plus an optional shape."""

    def __init__(self, block):
        self.block = block
        self.dim = len(block.indices)
        if block.parts is None:
            self.scale = np.array([RWM_SCALE / np.sqrt(self.dim)])
            self.part_dims = np.array([self.dim])
        else:
            self.part_dims = np.bincount(block.parts, minlength=block.n_parts)
            self.scale = RWM_SCALE / np.sqrt(self.part_dims.astype(float))
        self.shape = None
        self.window_accepts = np.zeros(block.n_parts)
        self.kept_accepts = np.zeros(block.n_parts)

    def step(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        if self.block.parts is None:
            if self.shape is not None:
                z = self.shape @ z
            return self.scale[0] * z
        return self.scale[self.block.parts] * z

    def adapt(self, window: int, target_accept: float) -> None:
        rate = self.window_accepts / window
        self.scale = self.scale * np.exp(2.0 * (rate - target_accept))
        self.window_accepts[:] = 0.0

    def learn_shape(self, history: np.ndarray) -> None:
        """Use the burn-in covariance of an unpartitioned block as proposal shape."""
        if self.block.parts is not None or self.dim < 2 or history.shape[0] <= 2 * self.dim:
            return
        covariance = np.cov(history[:, self.block.indices], rowvar=False)
        covariance = covariance + 1e-10 * np.eye(self.dim) * max(1.0, np.trace(covariance) / self.dim)
        try:
            self.shape = np.linalg.cholesky(covariance)
        except np.linalg.LinAlgError:
            return
        self.scale = np.array([RWM_SCALE / np.sqrt(self.dim)])


def run_target_chain(target, mcmc: McmcConfig, seed: int) -> ChainResult:
    """
    Run one chain on any target exposing initial_point, evaluate,
    block_terms, constrain and blocks.

    Proposal scales adapt during burn-in only and are frozen for kept draws.

    Raises:
        NonFiniteLogPosterior: the initial point has a non-finite log density
        StuckChain: a block accepts under 1% of kept proposals and
            mcmc.fail_on_stuck is set (otherwise only reported)
    """
    rng = make_generator(seed)
    theta = np.array(target.initial_point(), dtype=float)
    logpost, _ = target.evaluate(theta)
    if not np.isfinite(logpost):
        raise NonFiniteLogPosterior(f"log density at the initial point is {logpost}")

    states = [_BlockState(block) for block in target.blocks]
    n_burnin, n_keep = mcmc.n_burnin, mcmc.n_keep
    shape_start, shape_stop = n_burnin // 4, n_burnin // 2
    history = np.empty((max(shape_stop - shape_start, 0), theta.size))

    draws = np.empty((n_keep, theta.size))
    loglik = np.empty((n_keep, target.n_obs))
    logposts = np.empty(n_keep)
    scale_trace = np.empty((n_keep, sum(s.scale.size for s in states)))

    for iteration in range(n_burnin + n_keep):
        for state in states:
            block = state.block
            current = target.block_terms(theta, block)
            proposal = theta.copy()
            proposal[block.indices] += state.step(rng)
            proposed = target.block_terms(proposal, block)
            with np.errstate(invalid="ignore"):
                log_ratio = np.where(np.isfinite(proposed), proposed - current, -np.inf)
            accept = np.log(rng.uniform(size=block.n_parts)) < log_ratio
            if block.parts is None:
                if accept[0]:
                    theta = proposal
            else:
                moved = block.indices[accept[block.parts]]
                theta[moved] = proposal[moved]
            if iteration < n_burnin:
                state.window_accepts += accept
            else:
                state.kept_accepts += accept

        if iteration < n_burnin:
            if shape_start <= iteration < shape_stop:
                history[iteration - shape_start] = theta
            if iteration + 1 == shape_stop:
                for state in states:
                    state.learn_shape(history)
            if (iteration + 1) % mcmc.adapt_window == 0:
                for state in states:
                    state.adapt(mcmc.adapt_window, mcmc.target_accept)
            continue

        k = iteration - n_burnin
        logposts[k], loglik[k] = target.evaluate(theta)
        draws[k] = target.constrain(theta)
        scale_trace[k] = np.concatenate([s.scale for s in states])

    accept_rates = {s.block.name: float(s.kept_accepts.mean() / n_keep) for s in states}
    warnings = []
    for name, rate in accept_rates.items():
        if rate < config.MCMC_STUCK_ACCEPT:
            message = f"chain seed {seed}: block '{name}' acceptance {rate:.4f} after adaptation (stuck chain)"
            if mcmc.fail_on_stuck:
                raise StuckChain(message)
            logger.warning(message)
            warnings.append(message)
    return ChainResult(seed=seed, draws=draws, loglik=loglik, logpost=logposts,
                       accept_rates=accept_rates, scale_trace=scale_trace, warnings=warnings)


def run_chain(spec, data, mcmc: McmcConfig, seed: int) -> ChainResult:
    """Run one chain of the hierarchical model posterior."""
    return run_target_chain(PosteriorTarget(spec, data), mcmc, seed)


@dataclass
class PosteriorDraws:
    """
    Kept draws of all chains.

    Attributes:
        draws: (chains, iterations, parameters) natural-scale values
        param_names / param_kinds: labels and 'fixed' | 'random' | 'variance'
        loglik_pointwise: (chains, iterations, observations)
        logpost: (chains, iterations)
        accept_rates: per chain, block name -> acceptance rate
    """
    draws: np.ndarray
    param_names: List[str]
    loglik_pointwise: np.ndarray
    logpost: np.ndarray
    accept_rates: List[Dict[str, float]]
    param_kinds: List[str] = field(default_factory=list)
    scale_traces: List[np.ndarray] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    fingerprint: str = ""
    label: str = ""

    @property
    def n_chains(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_keep(self) -> int:
        return int(self.draws.shape[1])

    @property
    def n_params(self) -> int:
        return int(self.draws.shape[2])

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.n_params)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.param_names.index(name)]

    def to_trace_frame(self) -> pd.DataFrame:
        """One row per kept iteration: chain, iteration, logpost, parameters."""
        frame = pd.DataFrame(self.pooled(), columns=self.param_names)
        frame.insert(0, "logpost", self.logpost.reshape(-1))
        frame.insert(0, "iteration", np.tile(np.arange(self.n_keep), self.n_chains))
        frame.insert(0, "chain", np.repeat(np.arange(self.n_chains), self.n_keep))
        return frame

    @classmethod
    def from_chains(cls, chains: List[ChainResult], param_names, param_kinds=None, fingerprint="", label=""):
        return cls(
            draws=np.stack([c.draws for c in chains]),
            param_names=list(param_names),
            loglik_pointwise=np.stack([c.loglik for c in chains]),
            logpost=np.stack([c.logpost for c in chains]),
            accept_rates=[c.accept_rates for c in chains],
            param_kinds=list(param_kinds or []),
            scale_traces=[c.scale_trace for c in chains],
            seeds=[c.seed for c in chains],
            warnings=[w for c in chains for w in c.warnings],
            fingerprint=fingerprint,
            label=label,
        )


def _run_chain_job(args):
    target, mcmc, seed = args
    return run_target_chain(target, mcmc, seed)


def run_target_mcmc(target, mcmc: McmcConfig, jobs: int = 1, fingerprint: str = "", label: str = "") -> PosteriorDraws:
    """Run mcmc.n_chains independent chains on a target and collect them."""
    seeds = [chain_seed(mcmc.seed, c) for c in range(mcmc.n_chains)]
    logger.info("running %d chain(s): %d burn-in + %d kept iterations each (%d draws)",
                mcmc.n_chains, mcmc.n_burnin, mcmc.n_keep, config.get_total_draws(mcmc.n_chains, mcmc.n_keep))
    jobs_args = [(target, mcmc, seed) for seed in seeds]
    if jobs > 1 and mcmc.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, mcmc.n_chains)) as pool:
            chains = list(pool.map(_run_chain_job, jobs_args))
    else:
        chains = [_run_chain_job(args) for args in jobs_args]
    draws = PosteriorDraws.from_chains(chains, target.param_names, getattr(target, "param_kinds", None),
                                       fingerprint=fingerprint, label=label)
    if mcmc.n_keep < config.MIN_DRAWS_PER_CHAIN:
        message = (f"only {mcmc.n_keep} kept draw(s) per chain; convergence diagnostics need "
                   f"{config.MIN_DRAWS_PER_CHAIN}")
        logger.warning(message)
        draws.warnings.append(message)
    return draws


def run_mcmc(spec, data, mcmc: McmcConfig, jobs: int = 1) -> PosteriorDraws:
    """Run all chains of the hierarchical model; burn-in dropped."""
    target = PosteriorTarget(spec, data)
    return run_target_mcmc(target, mcmc, jobs=jobs, fingerprint=data.observation_fingerprint(), label=spec.label)


@dataclass
class ParameterConvergence:
    name: str
    interval_ratio: float
    flag: bool
    psrf: float


@dataclass
class ConvergenceReport:
    per_parameter: List[ParameterConvergence]
    overall_pass: bool
    prob: float
    tol: float

    @property
    def flagged(self) -> List[str]:
        return [p.name for p in self.per_parameter if p.flag]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"parameter": p.name, "interval_ratio": p.interval_ratio, "psrf": p.psrf, "flag": p.flag}
             for p in self.per_parameter],
            columns=["parameter", "interval_ratio", "psrf", "flag"],
        )


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    ratio = np.empty_like(numerator, dtype=float)
    zero = denominator == 0
    ratio[~zero] = numerator[~zero] / denominator[~zero]
    ratio[zero] = np.where(numerator[zero] == 0, 1.0, np.inf)
    return ratio


def gelman_rubin(chains: np.ndarray) -> np.ndarray:
    """
    Potential scale reduction factor per parameter.

    chains has shape (n_chains, n_iterations, n_parameters).
    """
    n_chains, length = chains.shape[:2]
    within = np.mean(np.var(chains, axis=1, ddof=1), axis=0)
    means = chains.mean(axis=1)
    between = length / (n_chains - 1.0) * np.sum((means - means.mean(axis=0)) ** 2, axis=0)
    pooled_var = within * (length - 1.0) / length + between * (n_chains + 1.0) / (length * n_chains)
    return np.sqrt(_safe_ratio(pooled_var, within))


def interval_ratio_diagnostic(
    draws: PosteriorDraws,
    prob: float = config.CONVERGENCE_PROB,
    tol: float = config.CONVERGENCE_TOL,
) -> ConvergenceReport:
    """
    Ratio of the pooled central interval width to the mean per-chain width.

    Interval endpoints are empirical-CDF quantiles, so chains holding
    identical draws give a ratio of exactly 1.

    Raises:
        InsufficientDraws: fewer than 2 chains or fewer than 10 draws per chain
    """
    if draws.n_chains < 2:
        raise InsufficientDraws("the interval-ratio diagnostic needs at least 2 chains")
    if draws.n_keep < config.MIN_DRAWS_PER_CHAIN:
        raise InsufficientDraws(
            f"{draws.n_keep} draw(s) per chain; the diagnostic needs {config.MIN_DRAWS_PER_CHAIN}"
        )
    tail = (1.0 - prob) / 2.0
    levels = [tail, 1.0 - tail]
    pooled = np.quantile(draws.pooled(), levels, axis=0, method="inverted_cdf")
    per_chain = np.quantile(draws.draws, levels, axis=1, method="inverted_cdf")
    pooled_width = pooled[1] - pooled[0]
    within_width = (per_chain[1] - per_chain[0]).mean(axis=0)
    ratios = _safe_ratio(pooled_width, within_width)
    psrf = gelman_rubin(draws.draws)
    rows = [
        ParameterConvergence(name=name, interval_ratio=float(r), flag=bool(r > tol or r < 1.0 / tol),
                             psrf=float(p))
        for name, r, p in zip(draws.param_names, ratios, psrf)
    ]
    report = ConvergenceReport(per_parameter=rows, overall_pass=bool(np.all(ratios <= tol)), prob=prob, tol=tol)
    if not report.overall_pass:
        logger.warning("interval ratio above %.3g for: %s", tol, ", ".join(report.flagged))
    return report
