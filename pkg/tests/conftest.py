import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulation checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_sigma_warnings():
    # out-of-range sigma warnings are exercised explicitly where relevant
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*outside.*calibration guarantees")
        yield
