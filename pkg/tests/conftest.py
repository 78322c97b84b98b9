import warnings

import numpy as np
import pytest

from fbcap import build_model, solve_stationary
from fbcap.errors import UnitCircleZeroWarning

THIRD_ORDER_A = [0.0, 0.6, 0.4]
THIRD_ORDER_C = [0.5, 0.4, 0.0]


@pytest.fixture
def awgn():
    return build_model([], [], 1.0)


@pytest.fixture
def ar1():
    return build_model([0.0], [0.95], 1.0)


@pytest.fixture
def arma1():
    return build_model([0.5], [0.95], 1.0)


def third_order_model():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnitCircleZeroWarning)
        return build_model(THIRD_ORDER_A, THIRD_ORDER_C, 1.0)


@pytest.fixture(scope="session")
def third_order():
    return third_order_model()


@pytest.fixture(scope="session")
def third_order_stationary():
    """Stationary optima of the third-order channel at P = 1 and P = 10."""
    model = third_order_model()
    return {P: solve_stationary(model, P) for P in (1.0, 10.0)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
