# app/dp_oracles/shuffle.py
"""
Shuffle-model bucketized vector summation: quantize, hash to one of s
buckets, split every (bucket, coordinate) entry into m additive shares over
F_p, with discrete Gaussian noise added by the first user.

The analyst only ever learns per-(bucket, coordinate) share sums, so the
shuffled multiset is equivalent to an s x d residue table mod p. Large runs
compute that table directly instead of materializing s*d*m messages per user,
storing only the buckets that hold data and drawing noise cells on demand.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sympy import nextprime

from app.core_types import NORM_TOL, NormViolationError
from app.dp_oracles.base import PrivacyParams
from app.dp_oracles.randomness import SharedRandomness, discrete_gaussian

logger = logging.getLogger(__name__)

MESSAGE_DTYPE = np.dtype([("bucket", "<u4"), ("coord", "<u4"), ("value", "<u8")])


@dataclass(frozen=True)
class ShuffleConfig:
    n: int
    d: int
    s: int
    eta_q: float
    sigma: float
    p: int
    m: int

    @classmethod
    def derive(
        cls,
        n: int,
        d: int,
        privacy: PrivacyParams,
        share_constant: float = 3.0,
        noise: bool = True,
    ) -> "ShuffleConfig":
        """`noise=False` is the sigma = 0 test mode."""
        if n < 1 or d < 1:
            raise ValueError("shuffle summation needs n >= 1 and d >= 1")
        eps, delta, beta = privacy.epsilon, privacy.delta, privacy.beta
        if noise and not delta > 0:
            raise ValueError("shuffle summation needs delta > 0")
        s = math.ceil(2 * n / beta)
        eta_q = 1.0 / n
        sigma = 20.0 * math.log(s * d / delta) / eps if noise else 0.0
        bound = 2 * n / eta_q + (20.0 * sigma * math.log(s * d / beta) if noise else 0.0)
        p = int(nextprime(math.floor(bound)))
        log_n = math.log(max(n, 2))
        log_term = math.log(2 * d * p / delta) if delta > 0 else math.log(2 * d * p)
        m = max(2, math.ceil(share_constant * (1.0 + log_term / log_n)))
        return cls(n=n, d=d, s=s, eta_q=eta_q, sigma=sigma, p=p, m=m)

    def quantize(self, X: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(X, dtype=float) / self.eta_q).astype(np.int64)

    def recenter(self, residues: np.ndarray) -> np.ndarray:
        v = np.asarray(residues, dtype=np.int64)
        signed = np.where(v > self.p / 2.0, v - self.p, v)
        return signed.astype(float) * self.eta_q


# -----------------------------
# Split and mix
# -----------------------------
def split_and_mix(x: int, p: int, m: int, rng: np.random.Generator | random.Random) -> list[int]:
    """m uniformly random shares summing to x mod p."""
    if not 0 <= x < p:
        raise ValueError(f"{x} is not a field element mod {p}")
    if m < 1:
        raise ValueError("m must be >= 1")
    r = rng if isinstance(rng, random.Random) else random.Random(int(rng.integers(0, 2**63 - 1)))
    shares = [r.randrange(p) for _ in range(m - 1)]
    shares.append((x - sum(shares)) % p)
    return shares


def split_and_mix_many(values: np.ndarray, p: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Shares for many field elements at once, shape (len(values), m)."""
    v = np.asarray(values, dtype=np.uint64)
    if p >= 2**62:
        raise ValueError("vectorized shares need p < 2^62")
    shares = np.empty((v.size, m), dtype=np.uint64)
    acc = np.zeros(v.size, dtype=np.uint64)
    pp = np.uint64(p)
    for j in range(m - 1):
        shares[:, j] = rng.integers(0, p, size=v.size, dtype=np.uint64)
        acc = (acc + shares[:, j]) % pp
    shares[:, m - 1] = (v + (pp - acc)) % pp
    return shares


# -----------------------------
# Noise
# -----------------------------
class CellNoise:
    """
    Discrete Gaussian noise of every (bucket, coordinate) cell. Each cell is an
    exact sample seeded by (noise seed, bucket, coordinate), so any subset of
    rows can be read without drawing the rest of the s x d table.
    """

    def __init__(self, sigma: float, d: int, seed: bytes):
        if len(seed) != 16:
            raise ValueError("noise seed must be 16 bytes")
        self.sigma = sigma
        self.d = d
        self.seed = seed
        self._rows: dict[int, np.ndarray] = {}

    @classmethod
    def draw(cls, cfg: ShuffleConfig, rng: np.random.Generator) -> "CellNoise | None":
        if cfg.sigma <= 0:
            return None
        return cls(cfg.sigma, cfg.d, rng.bytes(16))

    def cell_rng(self, bucket: int, coord: int) -> random.Random:
        h = hashlib.blake2b(
            struct.pack("<QQ", bucket, coord), digest_size=16, key=self.seed, person=b"dpk-cell"
        )
        return random.Random(int.from_bytes(h.digest(), "little"))

    def row(self, bucket: int) -> np.ndarray:
        cached = self._rows.get(bucket)
        if cached is None:
            cached = np.array(
                [discrete_gaussian(self.sigma, self.cell_rng(bucket, j)) for j in range(self.d)],
                dtype=np.int64,
            )
            self._rows[bucket] = cached
        return cached

    def rows(self, buckets: Sequence[int] | np.ndarray) -> np.ndarray:
        out = np.zeros((len(buckets), self.d), dtype=np.int64)
        for i, b in enumerate(buckets):
            out[i] = self.row(int(b))
        return out

    def table(self, s: int) -> np.ndarray:
        return self.rows(np.arange(s))


# -----------------------------
# Encoder
# -----------------------------
def shuffle_bvs_encode(
    x: np.ndarray,
    key: bytes,
    user: int,
    cfg: ShuffleConfig,
    Z: SharedRandomness,
    rng: np.random.Generator,
    noise: CellNoise | None = None,
) -> np.ndarray:
    """
    s*d*m messages of one user. User 0 adds discrete Gaussian noise to every
    (bucket, coordinate) entry; `noise` may supply those cells.
    """
    vec = np.asarray(x, dtype=float).reshape(-1)
    if vec.size != cfg.d:
        raise ValueError(f"payload has {vec.size} coordinates, config has {cfg.d}")
    if float(np.linalg.norm(vec)) > 1.0 + NORM_TOL:
        raise NormViolationError("shuffle payload must lie in the unit ball")

    table = np.zeros((cfg.s, cfg.d), dtype=np.int64)
    table[Z.shuffle_bucket(key, cfg.s)] = cfg.quantize(vec)
    if user == 0 and cfg.sigma > 0:
        cells = CellNoise.draw(cfg, rng) if noise is None else noise
        table += cells.table(cfg.s)
    residues = np.mod(table, cfg.p).astype(np.uint64).reshape(-1)

    shares = split_and_mix_many(residues, cfg.p, cfg.m, rng)
    msgs = np.empty(residues.size * cfg.m, dtype=MESSAGE_DTYPE)
    cells_idx = np.repeat(np.arange(residues.size), cfg.m)
    msgs["bucket"] = cells_idx // cfg.d
    msgs["coord"] = cells_idx % cfg.d
    msgs["value"] = shares.reshape(-1)
    return msgs


def shuffle_messages(messages: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """The shuffler: multiset union with a seeded permutation."""
    if not messages:
        return np.zeros(0, dtype=MESSAGE_DTYPE)
    allm = np.concatenate(list(messages))
    return allm[rng.permutation(allm.size)]


# -----------------------------
# Analyst side
# -----------------------------
def residue_table(messages: np.ndarray, cfg: ShuffleConfig) -> np.ndarray:
    """Per-(bucket, coordinate) share sums mod p."""
    table = np.zeros(cfg.s * cfg.d, dtype=np.uint64)
    if messages.size == 0:
        return table.reshape(cfg.s, cfg.d)
    cell = messages["bucket"].astype(np.int64) * cfg.d + messages["coord"].astype(np.int64)
    pp = np.uint64(cfg.p)
    values = messages["value"] % pp
    # keep partial sums below 2^64
    per_round = max(1, (2**63) // max(cfg.p, 1))
    order = np.argsort(cell, kind="stable")
    cell, values = cell[order], values[order]
    for start in range(0, cell.size, per_round):
        part = np.zeros_like(table)
        np.add.at(part, cell[start : start + per_round], values[start : start + per_round])
        table = (table + part % pp) % pp
    return table.reshape(cfg.s, cfg.d)


class ResidueTable:
    """
    The analyst's s x d view, kept sparse: `sums` holds the quantized
    contributions of the buckets that received any, and every cell also
    carries its `noise`. Rows are reduced mod p when read.
    """

    def __init__(self, cfg: ShuffleConfig, sums: dict[int, np.ndarray], noise: CellNoise | None = None):
        self.cfg = cfg
        self.sums = sums
        self.noise = noise

    @classmethod
    def from_dense(cls, table: np.ndarray, cfg: ShuffleConfig) -> "ResidueTable":
        t = np.asarray(table, dtype=np.int64)
        if t.shape != (cfg.s, cfg.d):
            raise ValueError(f"residue table has shape {t.shape}, config has {(cfg.s, cfg.d)}")
        return cls(cfg, {int(b): t[b] for b in np.flatnonzero(np.any(t != 0, axis=1))})

    def rows(self, buckets: Sequence[int] | np.ndarray) -> np.ndarray:
        out = np.zeros((len(buckets), self.cfg.d), dtype=np.int64)
        for i, b in enumerate(buckets):
            held = self.sums.get(int(b))
            if held is not None:
                out[i] = held
        if self.noise is not None:
            out += self.noise.rows(buckets)
        return np.mod(out, self.cfg.p).astype(np.uint64)

    def dense(self) -> np.ndarray:
        """The full table; draws every noise cell."""
        return self.rows(np.arange(self.cfg.s))


def simulate_residue_table(
    X: np.ndarray,
    keys: Sequence[bytes],
    cfg: ShuffleConfig,
    Z: SharedRandomness,
    rng: np.random.Generator,
    users: np.ndarray | None = None,
) -> ResidueTable:
    """
    The analyst's view computed from contributions directly. Row j of X is
    placed in the bucket of keys[j]; basic user 0 carries the noise.
    """
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    if users is None:
        users = np.arange(pts.shape[0])
    noise = CellNoise.draw(cfg, rng) if np.any(users == 0) else None
    sums: dict[int, np.ndarray] = {}
    if pts.shape[0]:
        held, slot = np.unique(Z.shuffle_buckets(keys, cfg.s), return_inverse=True)
        acc = np.zeros((held.size, cfg.d), dtype=np.int64)
        np.add.at(acc, slot.reshape(-1), cfg.quantize(pts))
        sums = {int(b): acc[i] for i, b in enumerate(held)}
    return ResidueTable(cfg, sums, noise)


def shuffle_bvs_decode(messages: np.ndarray, key: bytes, cfg: ShuffleConfig, Z: SharedRandomness) -> np.ndarray:
    ell = Z.shuffle_bucket(key, cfg.s)
    sel = messages[messages["bucket"] == ell]
    v = np.zeros(cfg.d, dtype=np.int64)
    for j in range(cfg.d):
        vals = sel["value"][sel["coord"] == j]
        v[j] = sum(int(a) for a in vals) % cfg.p
    return cfg.recenter(v)


class ShuffleVectorOracle:
    """Vector sums decoded from the rows of a residue table."""

    def __init__(self, residues: ResidueTable | np.ndarray, cfg: ShuffleConfig, Z: SharedRandomness):
        if not isinstance(residues, ResidueTable):
            residues = ResidueTable.from_dense(residues, cfg)
        self.residues = residues
        self.cfg = cfg
        self.Z = Z
        self.dimension = cfg.d

    def vector_sums(self, keys: Sequence[bytes]) -> np.ndarray:
        if not keys:
            return np.zeros((0, self.cfg.d))
        rows = self.residues.rows(self.Z.shuffle_buckets(keys, self.cfg.s))
        return self.cfg.recenter(rows.astype(np.int64))


def run_shuffle_bvs(
    X: np.ndarray,
    keys: Sequence[bytes],
    cfg: ShuffleConfig,
    Z: SharedRandomness,
    rng: np.random.Generator,
    materialize_limit: int,
) -> tuple[ResidueTable, np.ndarray | None]:
    """
    One protocol run over basic users (rows of X with their bucket keys).
    Returns the residue table and, when materialized, the shuffled messages.
    Both paths draw the noise seed first from `rng`, so they agree.
    """
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    n_basic = pts.shape[0]
    volume = n_basic * cfg.s * cfg.d * cfg.m
    if volume > materialize_limit:
        logger.info("SHUFFLE: simulating residue table messages=%s limit=%s", volume, materialize_limit)
        return simulate_residue_table(pts, keys, cfg, Z, rng), None

    noise = CellNoise.draw(cfg, rng)
    msgs = [
        shuffle_bvs_encode(pts[j], keys[j], j, cfg, Z, rng, noise=noise if j == 0 else None)
        for j in range(n_basic)
    ]
    shuffled = shuffle_messages(msgs, rng)
    logger.info("SHUFFLE: materialized messages=%s", shuffled.size)
    return ResidueTable.from_dense(residue_table(shuffled, cfg), cfg), shuffled


# -----------------------------
# Histogram stand-in
# -----------------------------
class CentralNoiseFrequencyOracle:
    """
    Exact generalized counts plus discrete Gaussian noise; the noise of a
    bucket is a deterministic function of (seed, bucket).
    """

    def __init__(self, exact, privacy: PrivacyParams, slots: int, Z: SharedRandomness):
        if not privacy.delta > 0:
            raise ValueError("the shuffle histogram needs delta > 0")
        self.exact = exact
        self.sigma = 20.0 * math.log(slots / privacy.delta) / privacy.epsilon
        self.Z = Z

    def _noise(self, key: bytes) -> int:
        seed = int.from_bytes(
            self.Z.seed + self.Z.bucket_hash(b"hist-noise" + key).to_bytes(8, "little"), "little"
        )
        return discrete_gaussian(self.sigma, random.Random(seed))

    def frequencies(self, keys: Sequence[bytes]) -> np.ndarray:
        base = self.exact.frequencies(keys)
        if self.sigma <= 0:
            return base
        return base + np.array([self._noise(k) for k in keys], dtype=float)
