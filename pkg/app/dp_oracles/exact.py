# app/dp_oracles/exact.py

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


def slot_keys(slots: np.ndarray) -> list[bytes]:
    """Bucket keys of integer key rows; the last axis holds the key words."""
    arr = np.asarray(slots, dtype="<i8")
    rows = np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))
    return [row.tobytes() for row in rows]


class ExactOracle:
    """
    Non-private frequency and vector-sum oracle over bucket assignments.
    `slots[u, t]` is the key row user u holds in slot t; every user's payload
    is added to each bucket it holds.
    """

    def __init__(self, slots: np.ndarray, vectors: np.ndarray | None = None, dimension: int = 0):
        s = np.asarray(slots, dtype=np.int64)
        if s.ndim != 3:
            raise ValueError("slots must have shape (users, slots, key width)")
        n, T, width = s.shape
        if vectors is not None:
            vec = np.asarray(vectors, dtype=float)
            if vec.shape[0] != n:
                raise ValueError("one payload row per user is required")
            dimension = vec.shape[1]
        else:
            vec = None
        self.dimension = dimension

        flat = s.reshape(n * T, width)
        if flat.shape[0]:
            uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
        else:
            uniq, inverse = np.zeros((0, width), dtype=np.int64), np.zeros(0, dtype=np.int64)
        self._counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(float)
        self._sums = np.zeros((uniq.shape[0], dimension))
        if vec is not None and flat.shape[0]:
            np.add.at(self._sums, inverse, np.repeat(vec, T, axis=0))
        self._index = {k: i for i, k in enumerate(slot_keys(uniq))} if uniq.shape[0] else {}
        logger.debug("ORACLE: exact buckets=%s users=%s slots=%s", len(self._index), n, T)

    def frequencies(self, keys: Sequence[bytes]) -> np.ndarray:
        return np.array([self._counts[self._index[k]] if k in self._index else 0.0 for k in keys])

    def vector_sums(self, keys: Sequence[bytes]) -> np.ndarray:
        out = np.zeros((len(keys), self.dimension))
        for row, k in enumerate(keys):
            idx = self._index.get(k)
            if idx is not None:
                out[row] = self._sums[idx]
        return out

    def query(self, key: bytes) -> tuple[float, np.ndarray]:
        return float(self.frequencies([key])[0]), self.vector_sums([key])[0]


def exact_oracle(slots: np.ndarray, vectors: np.ndarray, bucket: bytes) -> tuple[float, np.ndarray]:
    """True frequency and vector sum of one bucket."""
    return ExactOracle(slots, vectors).query(bucket)
