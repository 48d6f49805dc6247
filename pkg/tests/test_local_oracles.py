import math

import numpy as np
import pytest

from app.core_types import NormViolationError
from app.dp_oracles.base import PrivacyParams
from app.dp_oracles.exact import ExactOracle, exact_oracle, slot_keys
from app.dp_oracles.local import (
    LocalFrequencyOracle,
    LocalVectorOracle,
    basic_user,
    debias_factor,
    djw_constant,
    djw_privatize,
    explicit_hist_decode,
    explicit_hist_decode_many,
    explicit_hist_encode,
    explicit_hist_encode_batch,
    explicit_hist_vector_decode_many,
    explicit_hist_vector_encode_batch,
    generalize,
    hist_slot_encoder,
    keep_probability,
    key_level,
)


def _key(level, *grid):
    return np.asarray((level, *grid), dtype="<i8").tobytes()


# -----------------------------
# Privacy parameters
# -----------------------------
@pytest.mark.parametrize("kw", [{"epsilon": 0}, {"epsilon": 1, "delta": 1.0}, {"epsilon": 1, "beta": 0}])
def test_privacy_params_validation(kw):
    with pytest.raises(ValueError):
        PrivacyParams(**kw)


def test_privacy_split():
    part = PrivacyParams(3.0, 3e-6, 0.1).split(3)
    assert part.epsilon == pytest.approx(1.0)
    assert part.delta == pytest.approx(1e-6)
    assert part.beta == 0.1


# -----------------------------
# Exact oracle
# -----------------------------
def test_exact_oracle_counts_and_sums():
    slots = np.array([[[1, 0]], [[1, 0]], [[1, 1]]])
    vectors = np.array([[0.1, 0.2], [0.3, 0.0], [0.5, 0.5]])
    f, v = exact_oracle(slots, vectors, _key(1, 0))
    assert f == 2.0
    assert np.allclose(v, [0.4, 0.2])
    oracle = ExactOracle(slots, vectors)
    assert oracle.frequencies([_key(1, 5)])[0] == 0.0
    assert np.allclose(oracle.vector_sums([_key(1, 5)]), 0.0)


def test_slot_keys_match_key_bytes():
    assert slot_keys(np.array([[2, -1, 3]])) == [_key(2, -1, 3)]
    assert key_level(_key(4, 0, 0)) == 4


# -----------------------------
# Randomized response
# -----------------------------
def test_keep_probability_and_debias():
    assert keep_probability(math.log(3)) == pytest.approx(0.75)
    assert debias_factor(math.log(3)) == pytest.approx(2.0)
    assert keep_probability(math.inf) == 1.0
    assert debias_factor(math.inf) == 1.0


def test_noiseless_message_is_the_sign(Z, rng):
    assert explicit_hist_encode(b"k", 5, math.inf, Z, rng) == Z.sign(b"k", 5)


def test_histogram_estimates_counts(Z, rng):
    n = 4000
    keys = [b"A" if u < 1000 else b"B" for u in range(n)]
    hashes = Z.bucket_hashes(keys)
    users = np.arange(n)
    eps = 2.0
    msgs = explicit_hist_encode_batch(hashes, users, eps, Z, rng)
    std = debias_factor(eps) * math.sqrt(n)
    assert explicit_hist_decode(b"A", msgs, eps, Z) == pytest.approx(1000, abs=5 * std)
    assert explicit_hist_decode(b"B", msgs, eps, Z) == pytest.approx(3000, abs=5 * std)
    assert explicit_hist_decode(b"C", msgs, eps, Z) == pytest.approx(0, abs=5 * std)


# -----------------------------
# Vector privatizer
# -----------------------------
def test_djw_constant_in_one_dimension():
    assert djw_constant(1, 1.0) == pytest.approx(debias_factor(1.0))


def test_djw_outputs_have_fixed_norm(rng):
    X = np.array([[0.3, 0.4, 0.0], [0.0, 0.0, 0.0]])
    out = djw_privatize(X, 1.0, rng)
    assert np.allclose(np.linalg.norm(out, axis=1), djw_constant(3, 1.0))


def test_djw_is_unbiased(rng):
    x = np.array([0.6, -0.2, 0.3])
    out = djw_privatize(np.repeat(x[None, :], 20000, axis=0), 1.0, rng)
    assert np.allclose(out.mean(axis=0), x, atol=0.1)


def test_djw_rejects_long_vectors(rng):
    with pytest.raises(NormViolationError):
        djw_privatize(np.array([0.9, 0.9]), 1.0, rng)


def test_vector_sums_are_unbiased(Z, rng):
    n = 6000
    keys = [b"A" if u % 3 == 0 else b"B" for u in range(n)]
    X = np.tile([0.5, -0.5], (n, 1))
    users = np.arange(n)
    V = explicit_hist_vector_encode_batch(Z.bucket_hashes(keys), X, users, 2.0, Z, rng)
    sums = explicit_hist_vector_decode_many([b"A", b"B"], V, Z)
    B = djw_constant(2, 2.0)
    tol = 5 * B * math.sqrt(n)
    assert np.allclose(sums[0], [1000, -1000], atol=tol)
    assert np.allclose(sums[1], [2000, -2000], atol=tol)


# -----------------------------
# Parallel slots
# -----------------------------
def test_basic_user_index():
    assert basic_user(3, 1, 4) == 13
    assert np.array_equal(basic_user(np.arange(2), 1, 3), [1, 4])


def test_generalize_splits_the_budget(Z, rng):
    enc = generalize(hist_slot_encoder, 3, PrivacyParams(3.0))
    assert enc.slots == 3
    assert enc.privacy.epsilon == pytest.approx(1.0)
    out = enc([b"a", b"b", b"c"], None, 2, Z, rng)
    assert len(out) == 3 and set(out) <= {-1, 1}
    with pytest.raises(ValueError):
        enc([b"a"], None, 2, Z, rng)


def test_generalized_encoder_matches_the_batch_path(Z):
    slots, user, eps = 3, 5, 3.0
    keys = [b"a", b"b", b"c"]
    enc = generalize(hist_slot_encoder, slots, PrivacyParams(eps))
    per_message = enc(keys, None, user, Z, np.random.default_rng(4))
    batch = explicit_hist_encode_batch(
        Z.bucket_hashes(keys), basic_user(user, np.arange(slots), slots), eps / slots, Z, np.random.default_rng(4)
    )
    assert per_message == batch.tolist()


def test_slot_oracles_read_one_slot(Z, rng):
    n, T = 3000, 2
    # slot t holds a level-(t+1) key
    heavy = [_key(1, 0), _key(2, 1)]
    light = [_key(1, 1), _key(2, 3)]
    keys = np.empty((n, T), dtype=object)
    for u in range(n):
        for t in range(T):
            keys[u, t] = heavy[t] if u < 2000 else light[t]
    eps = 4.0
    per_slot = eps / T
    users = basic_user(np.arange(n)[:, None], np.arange(T)[None, :], T)
    hashes = Z.bucket_hashes(list(keys.reshape(-1))).reshape(n, T)
    bits = explicit_hist_encode_batch(hashes, users, per_slot, Z, rng)
    X = np.tile([0.2, 0.1], (n, 1))
    vecs = np.stack(
        [explicit_hist_vector_encode_batch(hashes[:, t], X, users[:, t], per_slot, Z, rng) for t in range(T)],
        axis=1,
    )

    slot_of = lambda key: key_level(key) - 1  # noqa: E731
    freq = LocalFrequencyOracle(bits, PrivacyParams(per_slot), Z, slot_of=slot_of)
    est = freq.frequencies(heavy + light)
    std = debias_factor(per_slot) * math.sqrt(n)
    assert np.allclose(est, [2000, 2000, 1000, 1000], atol=5 * std)
    # a level no slot holds decodes to zero
    assert freq.frequencies([_key(5, 0)])[0] == 0.0

    vec = LocalVectorOracle(vecs, Z, slot_of=slot_of)
    sums = vec.vector_sums(heavy)
    tol = 5 * djw_constant(2, per_slot) * math.sqrt(n)
    assert np.allclose(sums, [[400, 200], [400, 200]], atol=tol)


# -----------------------------
# Error growth with n
# -----------------------------
def _loglog_slope(ns, errors):
    return float(np.polyfit(np.log(ns), np.log(errors), 1)[0])


@pytest.mark.slow
def test_histogram_error_grows_like_sqrt_n(Z):
    eps, trials = 1.0, 30
    queries = [bytes([q]) for q in range(1, 21)]
    ns = [1_000, 10_000, 100_000]
    errors = []
    for n in ns:
        rng = np.random.default_rng(n)
        hashes = np.full(n, Z.bucket_hash(b"\x00"), dtype=np.uint64)
        sq = []
        for _ in range(trials):
            bits = explicit_hist_encode_batch(hashes, np.arange(n), eps, Z, rng)
            sq.append(explicit_hist_decode_many(queries, bits, eps, Z) ** 2)
        errors.append(math.sqrt(float(np.mean(sq))))
    assert 0.4 <= _loglog_slope(ns, errors) <= 0.6


@pytest.mark.slow
def test_vector_sum_error_grows_like_sqrt_n(Z):
    eps, d, trials = 1.0, 4, 30
    queries = [bytes([q]) for q in range(1, 11)]
    ns = [1_000, 10_000, 100_000]
    errors = []
    for n in ns:
        rng = np.random.default_rng(n)
        hashes = np.full(n, Z.bucket_hash(b"\x00"), dtype=np.uint64)
        X = np.tile([0.3, 0.0, -0.2, 0.1], (n, 1))
        sq = []
        for _ in range(trials):
            vecs = explicit_hist_vector_encode_batch(hashes, X, np.arange(n), eps, Z, rng)
            est = explicit_hist_vector_decode_many(queries, vecs, Z)
            sq.append(np.sum(est**2, axis=1))
        errors.append(math.sqrt(float(np.mean(sq))))
    assert 0.4 <= _loglog_slope(ns, errors) <= 0.6
