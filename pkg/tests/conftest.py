import numpy as np
import pytest

from divopt import Objective


@pytest.fixture
def popcount2():
    return Objective("popcount", "discrete_bits", 2, lambda x: np.sum(x, axis=1))


def popcount(d):
    return Objective("popcount", "discrete_bits", d, lambda x: np.sum(x, axis=1))
