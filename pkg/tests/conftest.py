import numpy as np
import pytest

from transferlab.data import synthetic_gaussians


@pytest.fixture(scope="session")
def toy2d():
    """Small well-separated 2D problem, cheap to train on."""
    return synthetic_gaussians(80, 2, 4.0, seed=0)


@pytest.fixture(scope="session")
def toy5d():
    """Overlapping 5D problem with both classes present everywhere."""
    return synthetic_gaussians(200, 5, 2.0, seed=1)


@pytest.fixture(scope="session")
def val5d():
    return synthetic_gaussians(100, 5, 2.0, seed=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
