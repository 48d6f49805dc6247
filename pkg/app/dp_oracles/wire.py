# app/dp_oracles/wire.py
"""
Binary transcript files.

Shuffle: header, then 16-byte records (u32 bucket, u32 coordinate, u64 field
element), little-endian.
Local: header, then one framed record per (user, slot):
u32 user, u32 slot, i8 sign bit, d x f64 vector.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.dp_oracles.shuffle import MESSAGE_DTYPE, ShuffleConfig

logger = logging.getLogger(__name__)

SHUFFLE_MAGIC = b"DPKS"
LOCAL_MAGIC = b"DPKL"
VERSION = 1

_SHUFFLE_HEADER = struct.Struct("<4sBIIIQQd")  # magic, version, s, d, m, p, count, eta_q
_LOCAL_HEADER = struct.Struct("<4sBIII")  # magic, version, n, slots, d


def local_record_dtype(d: int) -> np.dtype:
    return np.dtype([("user", "<u4"), ("slot", "<u4"), ("sign", "i1"), ("vector", "<f8", (d,))])


@dataclass(frozen=True)
class LocalTranscript:
    bits: np.ndarray  # (n, T) int8
    vectors: np.ndarray  # (n, T, d) float64

    def __post_init__(self) -> None:
        if self.bits.shape != self.vectors.shape[:2]:
            raise ValueError("sign bits and vectors disagree on (users, slots)")

    def to_bytes(self) -> bytes:
        n, T, d = self.vectors.shape
        rec = np.empty(n * T, dtype=local_record_dtype(d))
        users, slots = np.divmod(np.arange(n * T), T)
        rec["user"] = users
        rec["slot"] = slots
        rec["sign"] = self.bits.reshape(-1)
        rec["vector"] = self.vectors.reshape(n * T, d)
        return _LOCAL_HEADER.pack(LOCAL_MAGIC, VERSION, n, T, d) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LocalTranscript":
        magic, version, n, T, d = _LOCAL_HEADER.unpack_from(data)
        if magic != LOCAL_MAGIC or version != VERSION:
            raise ValueError("not a local transcript")
        rec = np.frombuffer(data, dtype=local_record_dtype(d), offset=_LOCAL_HEADER.size)
        if rec.size != n * T:
            raise ValueError(f"transcript holds {rec.size} records, header says {n * T}")
        order = np.lexsort((rec["slot"], rec["user"]))
        rec = rec[order]
        return cls(rec["sign"].reshape(n, T).copy(), rec["vector"].reshape(n, T, d).copy())


@dataclass(frozen=True)
class ShuffleTranscript:
    cfg: ShuffleConfig
    messages: np.ndarray

    def to_bytes(self) -> bytes:
        c = self.cfg
        header = _SHUFFLE_HEADER.pack(SHUFFLE_MAGIC, VERSION, c.s, c.d, c.m, c.p, self.messages.size, c.eta_q)
        return header + np.ascontiguousarray(self.messages, dtype=MESSAGE_DTYPE).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, n: int, sigma: float) -> "ShuffleTranscript":
        magic, version, s, d, m, p, count, eta_q = _SHUFFLE_HEADER.unpack_from(data)
        if magic != SHUFFLE_MAGIC or version != VERSION:
            raise ValueError("not a shuffle transcript")
        msgs = np.frombuffer(data, dtype=MESSAGE_DTYPE, offset=_SHUFFLE_HEADER.size).copy()
        if msgs.size != count:
            raise ValueError(f"transcript holds {msgs.size} messages, header says {count}")
        return cls(ShuffleConfig(n=n, d=d, s=s, eta_q=eta_q, sigma=sigma, p=p, m=m), msgs)


def write_transcript(path: str | Path, transcript: LocalTranscript | ShuffleTranscript) -> None:
    data = transcript.to_bytes()
    Path(path).write_bytes(data)
    logger.info("WIRE: wrote %s bytes to %s", len(data), path)


def read_local_transcript(path: str | Path) -> LocalTranscript:
    return LocalTranscript.from_bytes(Path(path).read_bytes())


def read_shuffle_transcript(path: str | Path, n: int, sigma: float) -> ShuffleTranscript:
    return ShuffleTranscript.from_bytes(Path(path).read_bytes(), n, sigma)
