"""Shared fixtures: bundled fixture paths, small designs and short MCMC settings."""

from pathlib import Path

import numpy as np
import pytest

from src.core.dataset import CodedDataset, VariableCatalog
from src.core.sampler import McmcConfig

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def catalog() -> VariableCatalog:
    return VariableCatalog.from_yaml(FIXTURES / "catalog.yaml")


@pytest.fixture
def quick_mcmc() -> McmcConfig:
    return McmcConfig(n_chains=2, n_burnin=400, n_keep=400, seed=11)


def random_dataset(n_groups: int = 4, per_group: int = 30, n_fixed: int = 2, seed: int = 0,
                   level2: bool = False) -> CodedDataset:
    """Balanced groups with random binary columns and responses."""
    rng = np.random.default_rng(seed)
    n = n_groups * per_group
    group = np.repeat(np.arange(n_groups), per_group)
    X = rng.integers(0, 2, size=(n, n_fixed)).astype(float)
    Z = (np.arange(n_groups) % 2).astype(float)[group][:, None] if level2 else np.zeros((n, 0))
    eta = 0.3 + X @ np.linspace(0.5, -0.5, n_fixed)
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(np.int64)
    return CodedDataset(
        response=y,
        fixed_design=X,
        level2_design=Z,
        group_index_l2=group,
        column_names=[f"x{p}[1]" for p in range(n_fixed)],
        level2_names=["w[1]"] if level2 else [],
        group_labels_l2=[f"g{j}" for j in range(n_groups)],
        row_ids=[str(i) for i in range(n)],
    ).validate()
