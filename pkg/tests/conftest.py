import numpy as np
import pytest

from dfadepth.data import generate_scenes
from dfadepth.model import build_model


@pytest.fixture(scope="session")
def fresh_model():
    return build_model(seed=17)


@pytest.fixture(scope="session")
def tiny_set():
    return generate_scenes("A", 6, seed=3)


@pytest.fixture
def scene(tiny_set):
    return tiny_set.images[0].copy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
