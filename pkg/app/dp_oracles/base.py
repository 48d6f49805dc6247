# app/dp_oracles/base.py

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0
    beta: float = 0.1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    def split(self, parts: int) -> "PrivacyParams":
        """Budget of one of `parts` parallel slots."""
        if parts < 1:
            raise ValueError("parts must be >= 1")
        return PrivacyParams(self.epsilon / parts, self.delta / parts, self.beta)

    def scaled(self, fraction: float) -> "PrivacyParams":
        return PrivacyParams(self.epsilon * fraction, self.delta * fraction, self.beta)


@runtime_checkable
class FrequencyOracle(Protocol):
    """Approximate bucket counts. Estimates are raw and may be negative."""

    def frequencies(self, keys: Sequence[bytes]) -> np.ndarray: ...


@runtime_checkable
class VectorSumOracle(Protocol):
    """Approximate per-bucket vector sums, one row per key."""

    dimension: int

    def vector_sums(self, keys: Sequence[bytes]) -> np.ndarray: ...
