import math

import pytest

from birkhoff.config import settings
from birkhoff.moran import MoranConfig
from birkhoff.symbolic import Potential, ShiftSpace


def binary_entropy(p: float) -> float:
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log(p) + (1 - p) * math.log(1 - p))


@pytest.fixture
def full():
    return ShiftSpace.full(2)


@pytest.fixture
def golden():
    return ShiftSpace.golden_mean()


@pytest.fixture
def ones(full):
    """Indicator of [1] on the full 2-shift"""
    return Potential.indicator(full, 1)


@pytest.fixture
def zero(full):
    return Potential.constant(full, 0.0)


@pytest.fixture
def golden_ones(golden):
    return Potential.indicator(golden, 1)


@pytest.fixture
def golden_zero(golden):
    return Potential.constant(golden, 0.0)


@pytest.fixture
def moran_fixture():
    """Full 2-shift, alpha = 1/2, three levels"""
    return MoranConfig(
        alpha=0.5,
        gamma=0.1,
        k_max=3,
        deltas=[0.2, 0.15, 0.1],
        lengths=[8, 10, 12],
        copies=[1, 2, 2],
        balls=1000,
        samples=1000,
    )


@pytest.fixture
def restore_settings():
    saved = settings.model_dump()
    yield settings
    for key, value in saved.items():
        setattr(settings, key, value)
