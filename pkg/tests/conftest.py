import warnings

import numpy as np
import pytest

from rydlock.atomic import LadderScheme, RydbergTarget
from rydlock.lockin import DitherSpec


@pytest.fixture(scope="session")
def scheme():
    return LadderScheme.rb85_default()


@pytest.fixture(scope="session")
def target50f():
    return RydbergTarget(50, "F7/2")


@pytest.fixture(scope="session")
def target63p():
    return RydbergTarget(63, "P3/2")


@pytest.fixture(scope="session")
def dither3():
    return DitherSpec(depth=15e6, f_mod=90e3, tau_lp=100e-6)


@pytest.fixture
def quiet_range_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
