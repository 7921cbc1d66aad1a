import numpy as np
import pytest

from otar.transport import UnitMap


def random_map(rng: np.random.Generator, m: int, sigma: float = 0.7) -> UnitMap:
    """Random strictly increasing map with log-normal cell slopes."""
    slopes = np.exp(sigma * rng.normal(size=m))
    v = np.concatenate([[0.0], np.cumsum(slopes)])
    return UnitMap.from_values(v / v[-1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
