# app/dp_oracles/randomness.py
"""
Shared randomness and samplers.

The sign tensor Z is never materialized: a keyed BLAKE2b digest of the bucket
key gives a 64-bit bucket hash, which is mixed with the user index by a
splitmix64 finalizer; the top bit is the sign.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class SharedRandomness:
    seed: bytes

    def __post_init__(self) -> None:
        if len(self.seed) != 16:
            raise ValueError("shared seed must be 16 bytes")

    @classmethod
    def from_seed(cls, seed: int | np.random.SeedSequence) -> "SharedRandomness":
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        return cls(ss.generate_state(4, dtype=np.uint32).astype("<u4").tobytes())

    def _digest(self, key: bytes, person: bytes) -> int:
        h = hashlib.blake2b(key, digest_size=8, key=self.seed, person=person)
        return int.from_bytes(h.digest(), "little")

    def bucket_hash(self, key: bytes) -> int:
        return self._digest(key, b"dpk-sign")

    def bucket_hashes(self, keys: Sequence[bytes]) -> np.ndarray:
        return np.fromiter((self.bucket_hash(k) for k in keys), dtype=np.uint64, count=len(keys))

    def signs_from_hashes(self, hashes: np.ndarray, users: np.ndarray) -> np.ndarray:
        """Elementwise (broadcasting) Z entries for bucket hashes and user indices."""
        h = np.asarray(hashes, dtype=np.uint64)
        u = np.asarray(users, dtype=np.int64).astype(np.uint64)
        with np.errstate(over="ignore"):
            mixed = _splitmix64(h ^ _splitmix64(u))
        top = (mixed >> np.uint64(63)).astype(np.int8)
        return (1 - 2 * top).astype(np.int8)

    def sign(self, key: bytes, user: int) -> int:
        h = np.array([self.bucket_hash(key)], dtype=np.uint64)
        return int(self.signs_from_hashes(h, np.array([user]))[0])

    def sign_matrix(self, keys: Sequence[bytes], users: np.ndarray) -> np.ndarray:
        """Rows are buckets, columns are users."""
        h = self.bucket_hashes(keys)
        return self.signs_from_hashes(h[:, None], np.asarray(users)[None, :])

    def shuffle_bucket(self, key: bytes, s: int) -> int:
        return self._digest(key, b"dpk-bckt") % s

    def shuffle_buckets(self, keys: Sequence[bytes], s: int) -> np.ndarray:
        return np.fromiter((self.shuffle_bucket(k, s) for k in keys), dtype=np.int64, count=len(keys))


@dataclass(frozen=True)
class RunStreams:
    """Independent streams split off one root seed."""

    shared: SharedRandomness
    projection: np.random.SeedSequence
    encoder: np.random.SeedSequence
    algorithm: np.random.SeedSequence
    dataset: np.random.SeedSequence

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        root = np.random.SeedSequence(seed)
        shared, projection, encoder, algorithm, dataset = root.spawn(5)
        return cls(SharedRandomness.from_seed(shared), projection, encoder, algorithm, dataset)


# -----------------------------
# Discrete Gaussian
# -----------------------------
def _python_rng(rng: np.random.Generator | random.Random) -> random.Random:
    if isinstance(rng, random.Random):
        return rng
    return random.Random(int(rng.integers(0, 2**63 - 1)))


def _bernoulli(p: Fraction, r: random.Random) -> bool:
    return r.randrange(p.denominator) < p.numerator


def _bernoulli_exp_small(gamma: Fraction, r: random.Random) -> bool:
    # gamma in [0, 1]
    k = 1
    while _bernoulli(gamma / k, r):
        k += 1
    return k % 2 == 1


def _bernoulli_exp(gamma: Fraction, r: random.Random) -> bool:
    while gamma > 1:
        if not _bernoulli_exp_small(Fraction(1), r):
            return False
        gamma -= 1
    return _bernoulli_exp_small(gamma, r)


def _discrete_laplace(t: int, r: random.Random) -> int:
    while True:
        u = r.randrange(t)
        if not _bernoulli_exp(Fraction(u, t), r):
            continue
        v = 0
        while _bernoulli_exp(Fraction(1), r):
            v += 1
        x = u + t * v
        negative = _bernoulli(Fraction(1, 2), r)
        if negative and x == 0:
            continue
        return -x if negative else x


def discrete_gaussian(sigma: float, rng: np.random.Generator | random.Random) -> int:
    """
    Exact sample of N_Z(0, sigma^2) by rejection from a discrete Laplace
    proposal; all Bernoulli trials use rational arithmetic.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = _python_rng(rng)
    sigma2 = Fraction(sigma) ** 2
    t = math.floor(sigma) + 1
    while True:
        y = _discrete_laplace(t, r)
        gamma = (abs(y) - sigma2 / t) ** 2 / (2 * sigma2)
        if _bernoulli_exp(gamma, r):
            return y
