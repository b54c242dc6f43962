import numpy as np
import pytest

from quadpose.skeleton import default_topology


@pytest.fixture(scope="session")
def topology():
    return default_topology()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
