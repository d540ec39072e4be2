import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from Kernels.kernel import KernelSpec, gram_matrix
from Simulation.datagen import Shard, SimDesign, sample_dataset

PROJECT_ROOT = Path(__file__).parent


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the slow Monte Carlo trend tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo trend test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_shard(rng, n, p, noise=1.0, beta=None):
    """Shard with Gaussian X, uniform T and a smooth f plus noise."""
    X = rng.standard_normal((n, p))
    T = rng.uniform(0.0, 1.0, n)
    beta = np.zeros(p) if beta is None else beta
    Y = X @ beta + np.sin(2 * np.pi * T) + noise * rng.standard_normal(n)
    return Shard(np.arange(n), Y, X, T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def spec():
    return KernelSpec()


@pytest.fixture
def small_data():
    return sample_dataset(SimDesign(N=60, p=8, seed=11))


@pytest.fixture
def small_shard(small_data):
    return small_data.as_shard()


@pytest.fixture
def small_gram(spec, small_shard):
    return gram_matrix(spec, small_shard.T)


@pytest.fixture
def smoke_config_path():
    return PROJECT_ROOT / "configs" / "smoke.toml"
