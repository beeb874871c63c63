import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def ref_grid():
    return np.arange(1, 1025) / 1025.0


@pytest.fixture(scope="session")
def small_dictionary(ref_grid):
    from qfr.dictionary import make_dictionary
    return make_dictionary(300, ((0.1, 1000.0), (0.1, 1000.0)), ref_grid, seed=11)
