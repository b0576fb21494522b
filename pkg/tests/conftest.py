import numpy as np
import pytest

from passlab.channel import RadioConfig
from passlab.geometry import SystemGeometry


@pytest.fixture
def geo_v():
    """Deployment used throughout the evaluation: 4 waveguides x 16 PAs."""
    return SystemGeometry(4, 16, 30.0, 12.0, 10.0, 3.0, 0.01)


@pytest.fixture
def radio():
    return RadioConfig(15e9)


@pytest.fixture
def radio_c3():
    # c = 3e8 makes lambda = 0.02 m exactly, so example phases are whole turns.
    return RadioConfig(15e9, lightspeed=3e8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
