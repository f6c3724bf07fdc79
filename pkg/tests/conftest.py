import numpy as np
import pytest

from parapot.config import Settings
from parapot.core import DiscreteMeasure, GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def small_grid():
    # 4 x 4 cells on [-1, 1]^2, 4 steps on [0, 1]
    return GridSpec.cube(2, 1.0, 4, 0.0, 1.0, 4)


@pytest.fixture
def dirac_2d():
    return DiscreteMeasure.dirac(np.zeros(2))


@pytest.fixture
def three_atoms():
    return DiscreteMeasure.from_atoms([
        ([0.0, 0.0], 0.0, 1.0),
        ([0.5, -0.25], 0.3, 2.0),
        ([-0.75, 0.5], -0.2, 0.5),
    ])
