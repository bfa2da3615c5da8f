import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from martingale import random_martingale  # noqa: E402
from space import make_dyadic_space  # noqa: E402


@pytest.fixture
def dyadic_1_2():
    return make_dyadic_space(1, 2)


@pytest.fixture
def dyadic_1_3():
    return make_dyadic_space(1, 3)


@pytest.fixture
def dyadic_2_2():
    return make_dyadic_space(2, 2)


@pytest.fixture
def dyadic_2_3():
    return make_dyadic_space(2, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def martingale_2_2(dyadic_2_2, rng):
    return random_martingale(dyadic_2_2, rng)


@pytest.fixture
def dyadic_1_4():
    return make_dyadic_space(1, 4)
