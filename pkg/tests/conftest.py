import functools

import numpy as np
import pytest

from cuspidal.localization import build_localization_system
from cuspidal.manifolds import build_manifold


@functools.lru_cache(maxsize=None)
def model(name: str, **overrides):
    return build_manifold(name, **overrides)


@functools.lru_cache(maxsize=None)
def system(name: str, **overrides):
    return build_localization_system(model(name, **overrides))


def core_points(m, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random natural points inside the truncated core of a model."""
    lo = np.min([c.natural_box()[0] for c in m.charts], axis=0)
    hi = np.max([c.natural_box()[1] for c in m.charts], axis=0)
    for i, c in enumerate(m.core):
        if c is not None:
            lo[i], hi[i] = c
        elif m.param.periods[i]:
            lo[i], hi[i] = 0.0, m.param.periods[i]
    return lo + (hi - lo) * rng.random((n, m.dim))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
