import math
import random

import numpy as np
import pytest
from scipy.stats import chi2_contingency, norm

from app.dp_oracles.randomness import RunStreams, SharedRandomness, discrete_gaussian
from app.dp_oracles.shuffle import CellNoise


def test_seed_must_be_sixteen_bytes():
    with pytest.raises(ValueError):
        SharedRandomness(b"short")


def test_signs_are_deterministic_and_balanced(Z):
    users = np.arange(4000)
    row = Z.sign_matrix([b"bucket-a"], users)[0]
    assert set(np.unique(row)) <= {-1, 1}
    assert abs(int(row.sum())) < 300
    again = SharedRandomness.from_seed(7).sign_matrix([b"bucket-a"], users)[0]
    assert np.array_equal(row, again)
    assert Z.sign(b"bucket-a", 17) == row[17]


def test_different_buckets_get_independent_signs(Z):
    users = np.arange(4000)
    a, b = Z.sign_matrix([b"a", b"b"], users).astype(int)
    assert abs(int(a @ b)) < 300


def test_shuffle_buckets_in_range(Z):
    keys = [bytes([i]) for i in range(50)]
    buckets = Z.shuffle_buckets(keys, 7)
    assert buckets.min() >= 0 and buckets.max() < 7
    assert Z.shuffle_bucket(keys[3], 7) == buckets[3]


def test_run_streams_are_reproducible():
    a = RunStreams.from_seed(11)
    b = RunStreams.from_seed(11)
    assert a.shared == b.shared
    assert np.random.default_rng(a.encoder).random() == np.random.default_rng(b.encoder).random()
    assert a.shared != RunStreams.from_seed(12).shared


def test_sigma_must_be_positive(rng):
    with pytest.raises(ValueError):
        discrete_gaussian(0.0, rng)


def _lattice_variance(sigma):
    k = np.arange(-40, 41)
    mass = np.exp(-(k**2) / (2 * sigma**2))
    return float((k**2 * mass).sum() / mass.sum())


def test_exact_discrete_gaussian_law():
    sigma = 2.0
    r = random.Random(3)
    draws = np.array([discrete_gaussian(sigma, r) for _ in range(20_000)])
    counts = np.bincount(np.abs(draws))
    # P(0) / P(+-1 combined / 2)
    ratio = counts[0] / (counts[1] / 2.0)
    assert ratio == pytest.approx(math.exp(1.0 / (2 * sigma**2)), rel=0.08)
    assert abs(draws.mean()) < 0.1
    assert draws.var() == pytest.approx(sigma**2, rel=0.05)
    # upper tail sits below the continuous tail one step earlier
    m = math.ceil(3 * sigma)
    assert np.mean(draws >= m) <= norm.sf(m - 1, scale=sigma)


@pytest.mark.parametrize("sigma", [0.4, 0.5])
def test_variance_stays_below_sigma_squared(sigma):
    r = random.Random(21)
    draws = np.array([discrete_gaussian(sigma, r) for _ in range(20_000)])
    assert _lattice_variance(sigma) < sigma**2
    assert draws.var() == pytest.approx(_lattice_variance(sigma), abs=0.01)
    assert draws.var() < sigma**2


def test_exact_discrete_gaussian_moments():
    r = random.Random(5)
    draws = np.array([discrete_gaussian(1.5, r) for _ in range(5000)])
    assert abs(draws.mean()) < 0.15
    assert draws.var() == pytest.approx(2.25, abs=0.4)


# -----------------------------
# Per-cell shuffle noise
# -----------------------------
def test_cell_noise_is_the_exact_sampler():
    noise = CellNoise(3.0, 4, bytes(range(16)))
    row = noise.row(17)
    assert row.dtype == np.int64
    expected = [discrete_gaussian(3.0, noise.cell_rng(17, j)) for j in range(4)]
    assert row.tolist() == expected
    again = CellNoise(3.0, 4, bytes(range(16)))
    assert np.array_equal(again.rows([5, 17]), np.stack([again.row(5), row]))
    with pytest.raises(ValueError):
        CellNoise(3.0, 4, b"short")


def test_cell_noise_matches_sequential_draws():
    sigma = 2.0
    cells = CellNoise(sigma, 1, bytes(16)).rows(np.arange(8000))[:, 0]
    r = random.Random(8)
    sequential = np.array([discrete_gaussian(sigma, r) for _ in range(8000)])
    edges = np.array([-np.inf, -3.5, -1.5, -0.5, 0.5, 1.5, 3.5, np.inf])
    table = np.stack([np.histogram(cells, edges)[0], np.histogram(sequential, edges)[0]])
    _, pvalue, _, _ = chi2_contingency(table)
    assert pvalue > 1e-3
    assert cells.var() == pytest.approx(sigma**2, rel=0.1)


@pytest.mark.slow
def test_exact_discrete_gaussian_law_at_scale():
    sigma = 2.0
    r = random.Random(9)
    draws = np.array([discrete_gaussian(sigma, r) for _ in range(1_000_000)])
    counts = np.bincount(np.abs(draws))
    ratio = counts[0] / (counts[1] / 2.0)
    assert ratio == pytest.approx(math.exp(1.0 / (2 * sigma**2)), rel=0.02)
    assert draws.var() < sigma**2 * 1.01
