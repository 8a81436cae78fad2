import numpy as np
import pytest

from achelous.autograd.nn import manual_seed
from achelous.autograd.tensor import precision
from achelous.models.config import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Build tensors and parameters in 64-bit inside the test."""
    with precision(np.float64):
        yield


@pytest.fixture
def seeded():
    manual_seed(0)


@pytest.fixture
def tiny_config():
    return ModelConfig.for_size("s0", channels=(8, 16, 32, 64), width=16)
