import numpy as np
import pytest

from policyregret.core import DgpSpec, PolicyClass, margin_dgp


@pytest.fixture
def margin1():
    return margin_dgp(1.0, 0.1)


@pytest.fixture
def band1():
    return margin_dgp(1.0, 0.1, noise="uniform-band")


@pytest.fixture
def flat_band():
    """Q(1, x) = 0.6 and Q(-1, x) = 0.4 everywhere, uniform-band rewards of half-width 0.2."""
    return DgpSpec(family="linear", delta=0.1, noise="uniform-band", coef=(0.5, 0.0, 0.1, 0.0))


@pytest.fixture
def thresholds():
    return PolicyClass.threshold_range(0.0, 1.0)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
