import numpy as np
import pytest

import stratope as sp


@pytest.fixture
def toy_env():
    """Two equiprobable contexts, two actions, Bernoulli rewards."""
    return sp.DiscreteEnvironment([0.5, 0.5], [[0.8, 0.2], [0.4, 0.6]])


@pytest.fixture
def uniform2():
    return sp.UniformPolicy(2)


@pytest.fixture
def toy_loggers():
    """Two distinct strictly-positive tabular loggers on the toy environment."""
    return [
        sp.TabularPolicy([[0.7, 0.3], [0.3, 0.7]]),
        sp.TabularPolicy([[0.25, 0.75], [0.55, 0.45]]),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
