import numpy as np
import pytest

from thermoface.icaam import precompute
from thermoface.synthetic import build_toy_model


@pytest.fixture(scope="session")
def toy_model():
    """One deterministic trained model shared by the whole suite."""
    return build_toy_model(seed=7)


@pytest.fixture(scope="session")
def toy_pre(toy_model):
    return precompute(toy_model)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
