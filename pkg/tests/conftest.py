import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def max_rel_error(numeric, analytic):
    """Gradient-check metric: worst absolute gap over the gradient scale."""
    numeric = np.asarray(numeric)
    analytic = np.asarray(analytic)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(numeric - analytic).max() / scale)
