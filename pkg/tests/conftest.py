# tests/conftest.py

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

os.environ.setdefault("DATABASE_URL", "sqlite://")

from app.core_types import WeightedPointSet  # noqa: E402
from app.dp_oracles.randomness import SharedRandomness  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def Z():
    return SharedRandomness.from_seed(7)


@pytest.fixture
def square():
    """Unit-square corners, weight 1 each."""
    return WeightedPointSet.from_points([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def random_ball_points(rng, n, d, radius=1.0):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return g * r[:, None]


@pytest.fixture
def ball_points():
    return random_ball_points


@pytest.fixture
def small_mixture():
    from app.bench_service import MixtureConfig, generate_mixture

    return generate_mixture(MixtureConfig(k_true=2, n=60, d=6, r=16.0, seed=3))
