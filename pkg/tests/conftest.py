import numpy as np
import pytest

from adubf.channel import LayoutConfig, generate_dataset

# small layout used by the fast module tests
TINY = LayoutConfig(M=2, K=2, Nt=4, Nr=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_layout():
    return TINY


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(TINY, 40, seed=5)


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_dataset(LayoutConfig(), 30, seed=9)


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
