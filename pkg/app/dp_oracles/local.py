# app/dp_oracles/local.py
"""
Local-model oracles: randomized-response histogram, the DJW vector
privatizer, bucketized vector summation and the parallel-slot reduction.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from app.core_types import NORM_TOL, NormViolationError
from app.dp_oracles.base import PrivacyParams
from app.dp_oracles.randomness import SharedRandomness

logger = logging.getLogger(__name__)

# bucket x user cells per decode chunk
DECODE_CHUNK_CELLS = 4_000_000


# -----------------------------
# Randomized response histogram
# -----------------------------
def keep_probability(epsilon: float) -> float:
    if math.isinf(epsilon):
        return 1.0
    return math.exp(epsilon) / (math.exp(epsilon) + 1.0)


def debias_factor(epsilon: float) -> float:
    if math.isinf(epsilon):
        return 1.0
    return (math.exp(epsilon) + 1.0) / (math.exp(epsilon) - 1.0)


def explicit_hist_encode(
    key: bytes, user: int, epsilon: float, Z: SharedRandomness, rng: np.random.Generator
) -> int:
    z = Z.sign(key, user)
    return z if rng.random() < keep_probability(epsilon) else -z


def explicit_hist_encode_batch(
    hashes: np.ndarray,
    users: np.ndarray,
    epsilon: float,
    Z: SharedRandomness,
    rng: np.random.Generator,
) -> np.ndarray:
    """One sign per (bucket hash, user) pair."""
    z = Z.signs_from_hashes(hashes, users)
    flip = rng.random(z.shape) >= keep_probability(epsilon)
    return np.where(flip, -z, z).astype(np.int8)


def explicit_hist_decode(
    key: bytes,
    messages: np.ndarray,
    epsilon: float,
    Z: SharedRandomness,
    users: np.ndarray | None = None,
) -> float:
    return float(explicit_hist_decode_many([key], messages, epsilon, Z, users)[0])


def explicit_hist_decode_many(
    keys: Sequence[bytes],
    messages: np.ndarray,
    epsilon: float,
    Z: SharedRandomness,
    users: np.ndarray | None = None,
) -> np.ndarray:
    y = np.asarray(messages, dtype=np.int64).reshape(-1)
    if users is None:
        users = np.arange(y.size)
    if y.size == 0 or not keys:
        return np.zeros(len(keys))
    hashes = Z.bucket_hashes(keys)
    out = np.empty(len(keys))
    chunk = max(1, DECODE_CHUNK_CELLS // y.size)
    for start in range(0, len(keys), chunk):
        zmat = Z.signs_from_hashes(hashes[start : start + chunk, None], users[None, :])
        # integer sums keep the result independent of summation order
        out[start : start + chunk] = (zmat.astype(np.int64) @ y).astype(float)
    return debias_factor(epsilon) * out


# -----------------------------
# DJW vector privatizer
# -----------------------------
@lru_cache(maxsize=256)
def djw_constant(d: int, epsilon: float) -> float:
    """Output norm B solving E[output] = x for the two-stage sampler."""
    return debias_factor(epsilon) * math.sqrt(math.pi) * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0))


def _unit_rows(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    g = rng.standard_normal((m, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return g / norms


def djw_privatize(x: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Rows of x (or a single vector) privatized to norm-B unbiased outputs."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    m, d = X.shape
    norms = np.linalg.norm(X, axis=1)
    if m and float(norms.max()) > 1.0 + NORM_TOL:
        raise NormViolationError(f"DJW input norm {float(norms.max()):.12g} exceeds 1")
    norms = np.minimum(norms, 1.0)

    direction = np.empty_like(X)
    nz = norms > 0
    direction[nz] = X[nz] / norms[nz, None]
    if np.any(~nz):
        direction[~nz] = _unit_rows(rng, int((~nz).sum()), d)
    keep_sign = rng.random(m) < (1.0 + norms) / 2.0
    v = np.where(keep_sign[:, None], direction, -direction)

    u = _unit_rows(rng, m, d)
    toward = rng.random(m) < keep_probability(epsilon)
    dots = np.einsum("ij,ij->i", u, v)
    # reflect across the hyperplane orthogonal to v when u is on the wrong side
    wrong = (dots > 0) != toward
    u[wrong] -= 2.0 * dots[wrong, None] * v[wrong]

    out = djw_constant(d, epsilon) * u
    return out[0] if single else out


def explicit_hist_vector_encode(
    key: bytes,
    x: np.ndarray,
    user: int,
    epsilon: float,
    Z: SharedRandomness,
    rng: np.random.Generator,
) -> np.ndarray:
    return djw_privatize(Z.sign(key, user) * np.asarray(x, dtype=float), epsilon, rng)


def explicit_hist_vector_encode_batch(
    hashes: np.ndarray,
    X: np.ndarray,
    users: np.ndarray,
    epsilon: float,
    Z: SharedRandomness,
    rng: np.random.Generator,
) -> np.ndarray:
    signs = Z.signs_from_hashes(hashes, users).astype(float)
    return djw_privatize(signs[:, None] * np.asarray(X, dtype=float), epsilon, rng)


def explicit_hist_vector_decode_many(
    keys: Sequence[bytes],
    vectors: np.ndarray,
    Z: SharedRandomness,
    users: np.ndarray | None = None,
) -> np.ndarray:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    n, d = V.shape
    if users is None:
        users = np.arange(n)
    out = np.zeros((len(keys), d))
    if n == 0 or not keys:
        return out
    hashes = Z.bucket_hashes(keys)
    chunk = max(1, DECODE_CHUNK_CELLS // n)
    for start in range(0, len(keys), chunk):
        zmat = Z.signs_from_hashes(hashes[start : start + chunk, None], users[None, :])
        out[start : start + chunk] = zmat.astype(float) @ V
    return out


# -----------------------------
# Parallel-slot reduction
# -----------------------------
SlotEncoder = Callable[[bytes, np.ndarray | None, int, PrivacyParams, SharedRandomness, np.random.Generator], object]


def basic_user(user: int | np.ndarray, slot: int | np.ndarray, slots: int):
    """Index of one slot of one user among the n*T basic users."""
    return user * slots + slot


def generalize(base: SlotEncoder, slots: int, privacy: PrivacyParams):
    """
    Each user runs `slots` copies of a basic encoder in parallel, one per held
    bucket, each at budget (eps/slots, delta/slots). The decoder sees n*slots
    basic users.

    This is the per-message form. `pipeline.encode_users` applies the same
    reduction to whole batches through `basic_user` and `PrivacyParams.split`;
    with one generator state both emit the same histogram messages.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    per_slot = privacy.split(slots)

    def encode(
        keys: Sequence[bytes],
        payload: np.ndarray | None,
        user: int,
        Z: SharedRandomness,
        rng: np.random.Generator,
    ) -> list:
        if len(keys) != slots:
            raise ValueError(f"expected {slots} bucket keys, got {len(keys)}")
        return [
            base(key, payload, basic_user(user, t, slots), per_slot, Z, rng) for t, key in enumerate(keys)
        ]

    encode.slots = slots  # type: ignore[attr-defined]
    encode.privacy = per_slot  # type: ignore[attr-defined]
    return encode


def hist_slot_encoder(key, payload, user, privacy, Z, rng) -> int:
    return explicit_hist_encode(key, user, privacy.epsilon, Z, rng)


def vector_slot_encoder(key, payload, user, privacy, Z, rng) -> np.ndarray:
    return explicit_hist_vector_encode(key, payload, user, privacy.epsilon, Z, rng)


def key_level(key: bytes) -> int:
    return int.from_bytes(key[:8], "little", signed=True)


def _group_by_slot(keys: Sequence[bytes], slot_of: Callable[[bytes], int] | None) -> dict[int | None, list[int]]:
    groups: dict[int | None, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(None if slot_of is None else slot_of(k), []).append(i)
    return groups


class LocalFrequencyOracle:
    """
    Decoder for the generalized randomized-response histogram.
    `bits[u, t]` is user u's message in slot t. When `slot_of` names the only
    slot a bucket can be held in, the estimate sums that slot's n messages;
    otherwise it sums all n*T basic messages.
    """

    def __init__(
        self,
        bits: np.ndarray,
        privacy: PrivacyParams,
        Z: SharedRandomness,
        slot_of: Callable[[bytes], int] | None = None,
    ):
        self.bits = np.asarray(bits, dtype=np.int8)
        self.privacy = privacy
        self.Z = Z
        self.slot_of = slot_of

    def frequencies(self, keys: Sequence[bytes]) -> np.ndarray:
        n, T = self.bits.shape
        out = np.zeros(len(keys))
        for slot, idx in _group_by_slot(keys, self.slot_of).items():
            sub = [keys[i] for i in idx]
            if slot is None:
                msgs = self.bits.reshape(-1)
                users = np.arange(n * T)
            elif 0 <= slot < T:
                msgs = self.bits[:, slot]
                users = basic_user(np.arange(n), slot, T)
            else:
                continue
            out[idx] = explicit_hist_decode_many(sub, msgs, self.privacy.epsilon, self.Z, users)
        return out


class LocalVectorOracle:
    def __init__(
        self,
        vectors: np.ndarray,
        Z: SharedRandomness,
        slot_of: Callable[[bytes], int] | None = None,
    ):
        self.vectors = np.asarray(vectors, dtype=float)
        self.dimension = int(self.vectors.shape[2])
        self.Z = Z
        self.slot_of = slot_of

    def vector_sums(self, keys: Sequence[bytes]) -> np.ndarray:
        n, T, d = self.vectors.shape
        out = np.zeros((len(keys), d))
        for slot, idx in _group_by_slot(keys, self.slot_of).items():
            sub = [keys[i] for i in idx]
            if slot is None:
                vecs = self.vectors.reshape(n * T, d)
                users = np.arange(n * T)
            elif 0 <= slot < T:
                vecs = self.vectors[:, slot, :]
                users = basic_user(np.arange(n), slot, T)
            else:
                continue
            out[idx] = explicit_hist_vector_decode_many(sub, vecs, self.Z, users)
        return out
