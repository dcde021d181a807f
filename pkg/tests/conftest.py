import numpy as np
import pytest

from exforge.data import SyntheticSpec, generate
from exforge.oracle import OracleHandle, train_victim
from exforge.presets import reference_victim


@pytest.fixture(scope="session")
def victim_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("victims")


@pytest.fixture(scope="session")
def grid_victim(victim_cache):
    return reference_victim("grid-digits", victim_cache)


@pytest.fixture(scope="session")
def spirals_victim(victim_cache):
    return reference_victim("spirals", victim_cache)


@pytest.fixture(scope="session")
def small_victim():
    """A quick 4-feature, 3-class victim for plumbing tests."""
    spec = SyntheticSpec("blobs", 600, 4, 3, 0.15, 3)
    return train_victim(generate(spec), epochs=15, hidden_layer_sizes=(16,), weight_decay=2e-3)


@pytest.fixture
def small_handle(small_victim):
    return OracleHandle(small_victim, 100_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
