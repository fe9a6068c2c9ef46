"""
Run configuration: one YAML document naming inputs, models, MCMC settings
and outputs. Relative paths resolve against the document's directory;
command-line flags override the document.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import config
from src import __version__
from src.core.dataset import DrivingMode
from src.core.errors import UsageError
from src.core.file_handler import ArtifactHeader, read_yaml
from src.core.hasher import ArtifactHasher
from src.core.model import HierarchicalModelSpec
from src.core.sampler import McmcConfig

logger = logging.getLogger(__name__)

MODE_BOTH = "Both"


@dataclass
class RunConfig:
    """
    Everything one command needs.

    Attributes:
        crashes / disengagements / catalog: Input paths (disengagements optional)
        mode: Autonomous, Conventional or Both
        models: Model specs, labels unique
        mcmc: Sampler settings; mcmc.seed is the master seed
        out: Output directory
        emit: Which fit artifacts to write (text, csv, plotdata)
        comparisons: Named label groups for compare
        scenario: Synthetic scenario document, if any
        config_hash: Digest of the effective document
    """
    crashes: Optional[Path]
    catalog: Optional[Path]
    models: List[HierarchicalModelSpec]
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    disengagements: Optional[Path] = None
    mode: str = MODE_BOTH
    out: Path = Path("out")
    emit: Dict[str, bool] = field(default_factory=lambda: dict(config.DEFAULT_EMIT))
    vif_threshold: float = config.VIF_THRESHOLD
    strict_linkage: bool = False
    comparisons: Dict[str, List[str]] = field(default_factory=dict)
    scenario: Optional[Path] = None
    jobs: int = 1
    config_hash: str = ""

    def __post_init__(self):
        if not self.models:
            raise UsageError("run config names no model specs")
        labels = [spec.label for spec in self.models]
        if any(not label for label in labels):
            raise UsageError("every model spec needs a label")
        if len(set(labels)) != len(labels):
            raise UsageError(f"model labels repeat: {labels}")
        if self.mode not in (MODE_BOTH, DrivingMode.AUTONOMOUS.value, DrivingMode.CONVENTIONAL.value):
            raise UsageError(f"mode must be Autonomous, Conventional or Both, got {self.mode!r}")
        unknown = set(self.emit) - set(config.DEFAULT_EMIT)
        if unknown:
            raise UsageError(f"unknown emit flag(s) {sorted(unknown)}")
        if self.jobs < 1:
            raise UsageError("jobs must be at least 1")

    @property
    def seed(self) -> int:
        return self.mcmc.seed

    @property
    def modes(self) -> List[DrivingMode]:
        if self.mode == MODE_BOTH:
            return list(DrivingMode)
        return [DrivingMode(self.mode)]

    def model(self, label: str) -> HierarchicalModelSpec:
        for spec in self.models:
            if spec.label == label:
                return spec
        raise UsageError(f"no model labelled {label!r} in the run config")

    def header(self, kind: str, **extra) -> ArtifactHeader:
        return ArtifactHeader(
            kind=kind,
            version=__version__,
            config_hash=self.config_hash,
            seed=self.seed,
            extra={key: str(value) for key, value in extra.items()},
        )

    @classmethod
    def from_dict(cls, document: Dict, base_dir: Path = Path("."), seed: Optional[int] = None,
                  out: Optional[str] = None, jobs: Optional[int] = None) -> "RunConfig":
        """Build a run config; seed, out and jobs override the document."""
        document = dict(document or {})
        inputs = document.get("inputs") or {}

        def resolve(value) -> Optional[Path]:
            if value in (None, ""):
                return None
            path = Path(value)
            return path if path.is_absolute() else base_dir / path

        mcmc_doc = dict(document.get("mcmc") or {})
        if "seed" in document:
            mcmc_doc.setdefault("seed", document["seed"])
        if seed is not None:
            mcmc_doc["seed"] = seed
        mcmc = McmcConfig.from_dict(mcmc_doc)

        hashed = {key: value for key, value in document.items() if key != "out"}
        hashed["mcmc"] = mcmc.to_dict()
        hashed["version"] = __version__
        try:
            models = [HierarchicalModelSpec.from_dict(item) for item in document.get("models") or []]
        except TypeError:
            raise UsageError("models must be a list of model spec mappings") from None
        emit = dict(config.DEFAULT_EMIT)
        emit.update(document.get("emit") or {})
        return cls(
            crashes=resolve(inputs.get("crashes")),
            catalog=resolve(inputs.get("catalog")),
            disengagements=resolve(inputs.get("disengagements")),
            models=models,
            mcmc=mcmc,
            mode=str(document.get("mode", MODE_BOTH)),
            out=Path(out) if out is not None else (resolve(document.get("out")) or Path("out")),
            emit=emit,
            vif_threshold=float(document.get("vif_threshold", config.VIF_THRESHOLD)),
            strict_linkage=bool(document.get("strict_linkage", False)),
            comparisons={str(k): list(v) for k, v in (document.get("comparisons") or {}).items()},
            scenario=resolve(document.get("scenario")),
            jobs=int(jobs if jobs is not None else document.get("jobs", 1)),
            config_hash=ArtifactHasher().hash_config(hashed),
        )

    @classmethod
    def from_yaml(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        document = read_yaml(path, "run config")
        run = cls.from_dict(document, base_dir=path.parent, **overrides)
        logger.debug("run config %s: hash %s, seed %d", path, run.config_hash, run.seed)
        return run
