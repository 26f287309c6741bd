import numpy as np
import pytest

from bbpoly.domain import BoundsVector
from bbpoly.synth import demo_network


@pytest.fixture
def demo_net():
    """2-2-2-2 demo network: dense/relu/dense/relu/dense, +/-1 weights."""
    return demo_network()


@pytest.fixture
def demo_region():
    return BoundsVector.uniform(2, -1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
