"""
Hierarchical logistic model: parameter layout, linear predictor, likelihood,
priors and the joint log-posterior.

logit(pi_ij) = g00 + sum_q g0q Z_qj + mu_0j + sum_p gp0 X_pij
               + sum_p sum_q gpq Z_qj X_pij + sum_{p in slopes} mu_pj X_pij
               (+ nu_k for the crash-type unit of a three-level model)

The level-1 disturbance is not part of the likelihood: a Bernoulli response
cannot identify it.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, gammaln, log_expit

import config
from src.core.dataset import CodedDataset, Nesting, split_column_name
from src.core.errors import (
    DimensionMismatch,
    InvalidModelSpec,
    NonBinaryResponse,
    NonPositiveVariance,
)
from src.core.file_handler import read_yaml

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class Structure(str, Enum):
    FIXED_ONLY = "FixedOnly"
    RANDOM_INTERCEPT = "RandomIntercept"
    RANDOM_INTERCEPT_AND_SLOPES = "RandomInterceptAndSlopes"


@dataclass(frozen=True)
class PriorConfig:
    """Normal(coef_mean, coef_variance) on coefficients, InvGamma(shape, rate) on variances."""
    coef_mean: float = config.PRIOR_COEF_MEAN
    coef_variance: float = config.PRIOR_COEF_VARIANCE
    variance_shape: float = config.PRIOR_VARIANCE_SHAPE
    variance_rate: float = config.PRIOR_VARIANCE_RATE

    def __post_init__(self):
        if not self.coef_variance > 0:
            raise InvalidModelSpec(f"coef_variance must be positive, got {self.coef_variance}")
        if not (self.variance_shape > 0 and self.variance_rate > 0):
            raise InvalidModelSpec("variance prior shape and rate must be positive")

    @classmethod
    def from_dict(cls, document: Optional[Dict]) -> "PriorConfig":
        document = document or {}
        known = {"coef_mean", "coef_variance", "variance_shape", "variance_rate"}
        unknown = set(document) - known
        if unknown:
            raise InvalidModelSpec(f"unknown prior setting(s) {sorted(unknown)}")
        return cls(**{key: float(value) for key, value in document.items()})

    def to_dict(self) -> Dict[str, float]:
        return {
            "coef_mean": self.coef_mean,
            "coef_variance": self.coef_variance,
            "variance_shape": self.variance_shape,
            "variance_rate": self.variance_rate,
        }


@dataclass(frozen=True)
class HierarchicalModelSpec:
    """
    Declarative description of one model.

    fixed_terms and level2_terms name catalog variables (all dummies) or
    single dummies 'variable[level]'. random_slope_terms is a subset of
    fixed_terms whose coefficients vary by level-2 group.
    """
    response_name: str
    fixed_terms: Tuple[str, ...] = ()
    random_slope_terms: Tuple[str, ...] = ()
    level2_terms: Tuple[str, ...] = ()
    structure: Structure = Structure.RANDOM_INTERCEPT
    nesting: Nesting = Nesting.TWO_LEVEL_VEHICLE_UNIT
    priors: PriorConfig = field(default_factory=PriorConfig)
    cross_level: bool = False
    overdispersion: bool = False
    label: str = ""

    def __post_init__(self):
        if self.random_slope_terms and self.structure is not Structure.RANDOM_INTERCEPT_AND_SLOPES:
            raise InvalidModelSpec(f"{self.structure.value} model cannot have random slopes")
        if self.structure is Structure.RANDOM_INTERCEPT_AND_SLOPES and not self.random_slope_terms:
            raise InvalidModelSpec("RandomInterceptAndSlopes model needs at least one random slope term")
        stray = [t for t in self.random_slope_terms if t not in self.fixed_terms]
        if stray:
            raise InvalidModelSpec(f"random slope term(s) {stray} are not fixed terms")
        if self.cross_level and not self.level2_terms:
            raise InvalidModelSpec("cross-level interactions need level-2 terms")
        if self.overdispersion:
            raise InvalidModelSpec("the level-1 overdispersion term is reserved and not implemented")

    @classmethod
    def from_dict(cls, document: Dict) -> "HierarchicalModelSpec":
        try:
            return cls(
                response_name=document["response"],
                fixed_terms=tuple(document.get("fixed_terms") or ()),
                random_slope_terms=tuple(document.get("random_slope_terms") or ()),
                level2_terms=tuple(document.get("level2_terms") or ()),
                structure=Structure(document.get("structure", Structure.RANDOM_INTERCEPT.value)),
                nesting=Nesting(document.get("nesting", Nesting.TWO_LEVEL_VEHICLE_UNIT.value)),
                priors=PriorConfig.from_dict(document.get("priors")),
                cross_level=bool(document.get("cross_level", False)),
                overdispersion=bool(document.get("overdispersion", False)),
                label=str(document.get("label", "")),
            )
        except KeyError as exc:
            raise InvalidModelSpec(f"model spec is missing {exc}") from None
        except ValueError as exc:
            raise InvalidModelSpec(str(exc)) from None

    @classmethod
    def from_yaml(cls, path) -> "HierarchicalModelSpec":
        return cls.from_dict(read_yaml(path, "model spec"))

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "response": self.response_name,
            "fixed_terms": list(self.fixed_terms),
            "random_slope_terms": list(self.random_slope_terms),
            "level2_terms": list(self.level2_terms),
            "structure": self.structure.value,
            "nesting": self.nesting.value,
            "cross_level": self.cross_level,
            "overdispersion": self.overdispersion,
            "priors": self.priors.to_dict(),
        }

    def with_structure(self, structure: Structure, label: str = "") -> "HierarchicalModelSpec":
        slopes = self.random_slope_terms if structure is Structure.RANDOM_INTERCEPT_AND_SLOPES else ()
        return replace(self, structure=structure, random_slope_terms=slopes, label=label or self.label)

    @property
    def has_random_intercept(self) -> bool:
        return self.structure is not Structure.FIXED_ONLY

    @property
    def has_level3(self) -> bool:
        return self.has_random_intercept and self.nesting is Nesting.THREE_LEVEL


def resolve_slope_columns(spec: HierarchicalModelSpec, column_names: Sequence[str]) -> List[int]:
    """Indices of design columns carrying a random slope."""
    if not spec.random_slope_terms:
        return []
    terms = set(spec.random_slope_terms)
    columns = [
        col for col, name in enumerate(column_names)
        if name in terms or split_column_name(name)[0] in terms
    ]
    if not columns:
        raise DimensionMismatch(f"random slope terms {sorted(terms)} match no design column")
    return columns


@dataclass
class ParameterVector:
    """
    All model parameters on their natural scale.

    Random-effect arrays are empty when the structure has no such term;
    variances are None when absent.
    """
    gamma00: float
    gamma_p0: np.ndarray
    gamma_0q: np.ndarray
    gamma_pq: np.ndarray
    mu0: np.ndarray
    mu_p: np.ndarray
    sigma0_sq: Optional[float] = None
    sigma_k_sq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nu0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau_sq: Optional[float] = None

    def variances(self) -> np.ndarray:
        values = []
        if self.sigma0_sq is not None:
            values.append(self.sigma0_sq)
        values.extend(np.asarray(self.sigma_k_sq, dtype=float).tolist())
        if self.tau_sq is not None:
            values.append(self.tau_sq)
        return np.asarray(values, dtype=float)


@dataclass
class Prediction:
    eta: np.ndarray
    pi: np.ndarray


@dataclass(frozen=True)
class ParameterLayout:
    """
    Flat addressing of a ParameterVector.

    The unconstrained vector stores variances as logs; names and kinds refer
    to the natural scale.
    """
    P: int
    Q: int
    J: int
    K: int
    slope_columns: Tuple[int, ...]
    cross_level: bool
    random_intercept: bool
    slices: Dict[str, slice]
    names: Tuple[str, ...]
    kinds: Tuple[str, ...]

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def S(self) -> int:
        return len(self.slope_columns)

    @classmethod
    def build(cls, spec: HierarchicalModelSpec, data: CodedDataset) -> "ParameterLayout":
        if spec.nesting is Nesting.THREE_LEVEL and data.group_index_l3 is None:
            raise DimensionMismatch("three-level model needs a level-3 group index in the data")
        P, Q = data.n_fixed, data.n_level2
        slope_columns = tuple(resolve_slope_columns(spec, data.column_names))
        random_intercept = spec.has_random_intercept
        J = data.n_groups if random_intercept else 0
        K = data.n_groups_l3 if spec.has_level3 else 0
        S = len(slope_columns)
        groups = list(data.group_labels_l2)
        names: List[str] = ["(Intercept)"]
        kinds: List[str] = ["fixed"]
        names += list(data.column_names)
        kinds += ["fixed"] * P
        names += [f"L2:{z}" for z in data.level2_names]
        kinds += ["fixed"] * Q
        if spec.cross_level:
            names += [f"{x}:{z}" for x in data.column_names for z in data.level2_names]
            kinds += ["fixed"] * (P * Q)
        names += [f"mu0[{g}]" for g in groups[:J]]
        kinds += ["random"] * J
        for col in slope_columns:
            names += [f"mu[{data.column_names[col]}][{g}]" for g in groups]
            kinds += ["random"] * J
        names += [f"nu0[{k}]" for k in (data.group_labels_l3 or [])[:K]]
        kinds += ["random"] * K
        if random_intercept:
            names.append("sigma0_sq")
            kinds.append("variance")
        names += [f"sigma_sq[{data.column_names[col]}]" for col in slope_columns]
        kinds += ["variance"] * S
        if K:
            names.append("tau_sq")
            kinds.append("variance")

        sizes = [
            ("gamma00", 1), ("gamma_p0", P), ("gamma_0q", Q),
            ("gamma_pq", P * Q if spec.cross_level else 0),
            ("mu0", J), ("mu_p", S * J), ("nu0", K),
            ("log_sigma0_sq", 1 if random_intercept else 0), ("log_sigma_k_sq", S),
            ("log_tau_sq", 1 if K else 0),
        ]
        slices, start = {}, 0
        for key, size in sizes:
            slices[key] = slice(start, start + size)
            start += size
        return cls(P=P, Q=Q, J=J, K=K, slope_columns=slope_columns, cross_level=spec.cross_level,
                   random_intercept=random_intercept, slices=slices, names=tuple(names), kinds=tuple(kinds))

    def coefficient_slice(self) -> slice:
        return slice(0, self.slices["gamma_pq"].stop)

    def variance_slice(self) -> slice:
        return slice(self.slices["log_sigma0_sq"].start, self.slices["log_tau_sq"].stop)

    def unpack(self, theta: np.ndarray) -> ParameterVector:
        """Unconstrained vector -> natural-scale parameters."""
        if theta.shape != (self.dim,):
            raise DimensionMismatch(f"parameter vector has shape {theta.shape}, layout expects ({self.dim},)")
        s = self.slices
        S = self.S
        gamma_pq = theta[s["gamma_pq"]].reshape(self.P, self.Q) if self.cross_level else np.zeros((self.P, self.Q))
        return ParameterVector(
            gamma00=float(theta[0]),
            gamma_p0=theta[s["gamma_p0"]],
            gamma_0q=theta[s["gamma_0q"]],
            gamma_pq=gamma_pq,
            mu0=theta[s["mu0"]],
            mu_p=theta[s["mu_p"]].reshape(S, self.J),
            sigma0_sq=float(np.exp(theta[s["log_sigma0_sq"]][0])) if self.random_intercept else None,
            sigma_k_sq=np.exp(theta[s["log_sigma_k_sq"]]),
            nu0=theta[s["nu0"]],
            tau_sq=float(np.exp(theta[s["log_tau_sq"]][0])) if self.K else None,
        )

    def pack(self, params: ParameterVector) -> np.ndarray:
        """Natural-scale parameters -> unconstrained vector."""
        variances = params.variances()
        if (variances <= 0).any():
            raise NonPositiveVariance("variances must be positive to take logs")
        parts = [
            np.atleast_1d(params.gamma00),
            np.ravel(params.gamma_p0),
            np.ravel(params.gamma_0q),
            np.ravel(params.gamma_pq) if self.cross_level else np.zeros(0),
            np.ravel(params.mu0),
            np.ravel(params.mu_p),
            np.ravel(params.nu0),
            np.log(variances),
        ]
        theta = np.concatenate([np.asarray(p, dtype=float) for p in parts])
        if theta.shape != (self.dim,):
            raise DimensionMismatch(f"parameters pack to {theta.shape[0]} values, layout expects {self.dim}")
        return theta

    def constrain(self, theta: np.ndarray) -> np.ndarray:
        """Unconstrained vector -> natural-scale flat vector (names order)."""
        natural = np.array(theta, dtype=float, copy=True)
        v = self.variance_slice()
        natural[v] = np.exp(natural[v])
        return natural

    def initial_point(self) -> np.ndarray:
        """Coefficients and random effects at 0, variances at the configured start."""
        theta = np.zeros(self.dim)
        theta[self.variance_slice()] = np.log(config.MCMC_INITIAL_VARIANCE)
        return theta

    def zeros(self) -> ParameterVector:
        return self.unpack(self.initial_point())


def _normal_logpdf(x, mean, variance):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(variance)) - (x - mean) ** 2 / (2.0 * variance)


def _invgamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def _check_dimensions(params: ParameterVector, data: CodedDataset, slope_columns: Sequence[int]) -> None:
    P, Q, J = data.n_fixed, data.n_level2, data.n_groups
    if np.shape(params.gamma_p0) != (P,):
        raise DimensionMismatch(f"gamma_p0 has shape {np.shape(params.gamma_p0)}, data has {P} fixed columns")
    if np.shape(params.gamma_0q) != (Q,):
        raise DimensionMismatch(f"gamma_0q has shape {np.shape(params.gamma_0q)}, data has {Q} level-2 columns")
    if np.shape(params.gamma_pq) != (P, Q):
        raise DimensionMismatch(f"gamma_pq has shape {np.shape(params.gamma_pq)}, expected ({P}, {Q})")
    if np.size(params.mu0) not in (0, J):
        raise DimensionMismatch(f"mu0 has {np.size(params.mu0)} entries, data has {J} groups")
    if np.size(params.mu_p) and np.shape(params.mu_p) != (len(slope_columns), J):
        raise DimensionMismatch(f"mu_p has shape {np.shape(params.mu_p)}, expected ({len(slope_columns)}, {J})")
    if np.size(params.nu0) and np.size(params.nu0) != data.n_groups_l3:
        raise DimensionMismatch(f"nu0 has {np.size(params.nu0)} entries, data has {data.n_groups_l3} level-3 groups")


def _eta(params: ParameterVector, data: CodedDataset, slope_columns: Sequence[int]) -> np.ndarray:
    X, Z, g = data.fixed_design, data.level2_design, data.group_index_l2
    eta = params.gamma00 + X @ params.gamma_p0
    if data.n_level2:
        eta = eta + Z @ params.gamma_0q
        if np.any(params.gamma_pq):
            eta = eta + np.einsum("ip,iq,pq->i", X, Z, params.gamma_pq)
    if np.size(params.mu0):
        eta = eta + params.mu0[g]
    if np.size(params.mu_p):
        for s, col in enumerate(slope_columns):
            eta = eta + params.mu_p[s][g] * X[:, col]
    if np.size(params.nu0):
        eta = eta + params.nu0[data.group_index_l3]
    return eta


def linear_predictor(spec: HierarchicalModelSpec, params: ParameterVector, data: CodedDataset) -> Prediction:
    """
    Evaluate eta and pi for every row.

    Raises:
        DimensionMismatch: parameter shapes disagree with the data
    """
    slope_columns = resolve_slope_columns(spec, data.column_names)
    _check_dimensions(params, data, slope_columns)
    eta = _eta(params, data, slope_columns)
    return Prediction(eta=eta, pi=expit(eta))


def pointwise_log_likelihood(eta: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Bernoulli log-likelihood per row, evaluated stably on the logit scale."""
    return np.where(response == 1, log_expit(eta), log_expit(-eta))


def log_likelihood(prediction: Prediction, response: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Sum of y ln pi + (1 - y) ln(1 - pi), plus the per-row terms.

    Raises:
        NonBinaryResponse: response has values other than 0 and 1
    """
    response = np.asarray(response)
    if not np.isin(response, (0, 1)).all():
        raise NonBinaryResponse("response must be 0/1")
    if response.shape != prediction.eta.shape:
        raise DimensionMismatch(f"response has shape {response.shape}, prediction {prediction.eta.shape}")
    pointwise = pointwise_log_likelihood(prediction.eta, response)
    return float(pointwise.sum()), pointwise


def log_prior(spec: HierarchicalModelSpec, params: ParameterVector) -> float:
    """
    Normal priors on coefficients, inverse-gamma on variances and normal
    random effects given their variance.

    Raises:
        NonPositiveVariance: a variance component is <= 0
    """
    variances = params.variances()
    if (variances <= 0).any() or not np.isfinite(variances).all():
        raise NonPositiveVariance(f"variance components must be positive, got {variances.tolist()}")
    prior = spec.priors
    coefficients = [np.atleast_1d(params.gamma00), np.ravel(params.gamma_p0), np.ravel(params.gamma_0q)]
    if spec.cross_level:
        coefficients.append(np.ravel(params.gamma_pq))
    total = float(_normal_logpdf(np.concatenate(coefficients), prior.coef_mean, prior.coef_variance).sum())
    total += float(_invgamma_logpdf(variances, prior.variance_shape, prior.variance_rate).sum())
    if params.sigma0_sq is not None:
        total += float(_normal_logpdf(params.mu0, 0.0, params.sigma0_sq).sum())
    for s, variance in enumerate(np.atleast_1d(params.sigma_k_sq)):
        total += float(_normal_logpdf(params.mu_p[s], 0.0, variance).sum())
    if params.tau_sq is not None:
        total += float(_normal_logpdf(params.nu0, 0.0, params.tau_sq).sum())
    return total


def log_posterior(spec: HierarchicalModelSpec, params: ParameterVector, data: CodedDataset) -> float:
    """Unnormalized log-posterior: log_likelihood + log_prior."""
    total, _ = log_likelihood(linear_predictor(spec, params, data), data.response)
    return total + log_prior(spec, params)


@dataclass(frozen=True)
class Block:
    """
    A group of unconstrained coordinates updated together.

    When parts is set, coordinates split into conditionally independent
    sub-blocks (parts[i] is the sub-block of indices[i]) accepted separately.
    """
    name: str
    indices: np.ndarray
    parts: Optional[np.ndarray] = None
    n_parts: int = 1


class PosteriorTarget:
    """
    The log-posterior on the unconstrained scale (log variances, Jacobian
    included), with the per-block terms the sampler needs.
    """

    def __init__(self, spec: HierarchicalModelSpec, data: CodedDataset):
        data.validate(allow_empty=True)
        self.spec = spec
        self.data = data
        self.layout = ParameterLayout.build(spec, data)
        self.param_names = list(self.layout.names)
        self.param_kinds = list(self.layout.kinds)
        self.blocks = self._build_blocks()

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def n_obs(self) -> int:
        return self.data.n_rows

    def initial_point(self) -> np.ndarray:
        return self.layout.initial_point()

    def constrain(self, theta: np.ndarray) -> np.ndarray:
        return self.layout.constrain(theta)

    def _build_blocks(self) -> List[Block]:
        s = self.layout.slices
        lay = self.layout
        blocks = [Block("gamma", np.arange(lay.coefficient_slice().stop))]
        if lay.J:
            mu_indices = np.concatenate([np.arange(s["mu0"].start, s["mu0"].stop),
                                         np.arange(s["mu_p"].start, s["mu_p"].stop)])
            mu_parts = np.concatenate([np.arange(lay.J), np.tile(np.arange(lay.J), lay.S)])
            blocks.append(Block("mu", mu_indices, mu_parts, lay.J))
        if lay.K:
            blocks.append(Block("nu", np.arange(s["nu0"].start, s["nu0"].stop), np.arange(lay.K), lay.K))
        variance = lay.variance_slice()
        if variance.stop > variance.start:
            blocks.append(Block("variance", np.arange(variance.start, variance.stop)))
        return blocks

    def _pointwise(self, params: ParameterVector) -> np.ndarray:
        eta = _eta(params, self.data, self.layout.slope_columns)
        return pointwise_log_likelihood(eta, self.data.response)

    def _coefficient_prior(self, params: ParameterVector) -> float:
        prior = self.spec.priors
        coefficients = [np.atleast_1d(params.gamma00), params.gamma_p0, params.gamma_0q]
        if self.layout.cross_level:
            coefficients.append(np.ravel(params.gamma_pq))
        return float(_normal_logpdf(np.concatenate(coefficients), prior.coef_mean, prior.coef_variance).sum())

    def _random_effect_prior_by_group(self, params: ParameterVector) -> np.ndarray:
        terms = _normal_logpdf(params.mu0, 0.0, params.sigma0_sq)
        for s in range(self.layout.S):
            terms = terms + _normal_logpdf(params.mu_p[s], 0.0, params.sigma_k_sq[s])
        return terms

    def _variance_terms(self, theta: np.ndarray, params: ParameterVector) -> float:
        prior = self.spec.priors
        log_variances = theta[self.layout.variance_slice()]
        total = float((_invgamma_logpdf(np.exp(log_variances), prior.variance_shape, prior.variance_rate)
                       + log_variances).sum())
        if self.layout.J:
            total += float(self._random_effect_prior_by_group(params).sum())
        if self.layout.K:
            total += float(_normal_logpdf(params.nu0, 0.0, params.tau_sq).sum())
        return total

    def evaluate(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        """Log density (with Jacobian) and the pointwise log-likelihood."""
        params = self.layout.unpack(theta)
        pointwise = self._pointwise(params)
        total = float(pointwise.sum()) + self._coefficient_prior(params) + self._variance_terms(theta, params)
        return total, pointwise

    def log_density(self, theta: np.ndarray) -> float:
        return self.evaluate(theta)[0]

    def block_terms(self, theta: np.ndarray, block: Block) -> np.ndarray:
        """
        Terms of the log density that depend on a block, one per sub-block.

        Differences of these terms equal differences of the full log density
        when only that (sub-)block changes.
        """
        params = self.layout.unpack(theta)
        if block.name == "gamma":
            return np.array([self._pointwise(params).sum() + self._coefficient_prior(params)])
        if block.name == "mu":
            by_group = np.bincount(self.data.group_index_l2, weights=self._pointwise(params), minlength=self.layout.J)
            return by_group + self._random_effect_prior_by_group(params)
        if block.name == "nu":
            by_group = np.bincount(self.data.group_index_l3, weights=self._pointwise(params), minlength=self.layout.K)
            return by_group + _normal_logpdf(params.nu0, 0.0, params.tau_sq)
        if block.name == "variance":
            return np.array([self._variance_terms(theta, params)])
        raise KeyError(f"unknown block {block.name!r}")

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Analytic gradient of log_density with respect to theta."""
        lay, s, data = self.layout, self.layout.slices, self.data
        params = lay.unpack(theta)
        prior = self.spec.priors
        X, Z, g = data.fixed_design, data.level2_design, data.group_index_l2
        eta = _eta(params, data, lay.slope_columns)
        residual = data.response - expit(eta)
        grad = np.zeros(lay.dim)

        grad[0] = residual.sum() - (params.gamma00 - prior.coef_mean) / prior.coef_variance
        grad[s["gamma_p0"]] = X.T @ residual - (params.gamma_p0 - prior.coef_mean) / prior.coef_variance
        grad[s["gamma_0q"]] = Z.T @ residual - (params.gamma_0q - prior.coef_mean) / prior.coef_variance
        if lay.cross_level:
            interaction = X.T @ (residual[:, None] * Z)
            grad[s["gamma_pq"]] = (interaction - (params.gamma_pq - prior.coef_mean) / prior.coef_variance).ravel()

        a, b = prior.variance_shape, prior.variance_rate
        variance_grad = []
        if lay.J:
            grad[s["mu0"]] = np.bincount(g, weights=residual, minlength=lay.J) - params.mu0 / params.sigma0_sq
            slope_grad = np.zeros((lay.S, lay.J))
            for k, col in enumerate(lay.slope_columns):
                slope_grad[k] = (np.bincount(g, weights=residual * X[:, col], minlength=lay.J)
                                 - params.mu_p[k] / params.sigma_k_sq[k])
            grad[s["mu_p"]] = slope_grad.ravel()
            variance_grad.append(-a + b / params.sigma0_sq
                                 - 0.5 * lay.J + 0.5 * np.sum(params.mu0 ** 2) / params.sigma0_sq)
            for k in range(lay.S):
                variance_grad.append(-a + b / params.sigma_k_sq[k]
                                     - 0.5 * lay.J + 0.5 * np.sum(params.mu_p[k] ** 2) / params.sigma_k_sq[k])
        if lay.K:
            grad[s["nu0"]] = (np.bincount(data.group_index_l3, weights=residual, minlength=lay.K)
                              - params.nu0 / params.tau_sq)
            variance_grad.append(-a + b / params.tau_sq
                                 - 0.5 * lay.K + 0.5 * np.sum(params.nu0 ** 2) / params.tau_sq)
        if variance_grad:
            grad[lay.variance_slice()] = variance_grad
        return grad
