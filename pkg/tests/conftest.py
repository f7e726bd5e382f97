import numpy as np
import pytest

from ldpfreq.core import Mechanism


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_mechanism(rng, a, b, low=0.05):
    m = rng.uniform(low, 1.0, size=(b, a))
    return Mechanism(m / m.sum(axis=0))
