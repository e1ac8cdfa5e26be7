import numpy as np
import pytest

from pftransport import basis, dynamics, estimation


@pytest.fixture
def duffing():
    return dynamics.duffing_system()


@pytest.fixture
def small_dictionary():
    """Coarse 2D dictionary sized for fast estimation tests."""
    lo, hi = np.array([-2.0, -2.0]), np.array([2.0, 2.0])
    width = basis.default_width(lo, hi, 7)
    return basis.build_rbf_grid(lo, hi, 7, width)


@pytest.fixture
def small_ics():
    return basis.grid_points([-2.0, -2.0], [2.0, 2.0], 15)


@pytest.fixture
def small_duffing_model(duffing, small_dictionary, small_ics):
    return estimation.build_generator_model(duffing, small_dictionary, small_ics, 0.005)
