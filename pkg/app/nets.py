# app/nets.py
"""
Per-level nets realized as shifted axis-aligned grids.

Level i >= 1 is the grid  o_i + s_i * Z^d  with pitch s_i = 2*rho_i/sqrt(d),
rho_i = 2^-i and offset o_i = 1e-7 * rho_i * (1,...,1), restricted to the
ball B(0, 1 + 2*rho_i). Level 0 is the single point 0.

Covering radius is exactly rho_i and packing radius is rho_i/sqrt(d), so the
realized packing constant is gamma = 1/sqrt(d).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from app.core_types import NORM_TOL, NormViolationError, SearchSpaceTooLargeError

logger = logging.getLogger(__name__)

OFFSET_FACTOR = 1e-7
_MEMBER_TOL = 1e-12
# grid vectors scanned per enumeration
ENUM_LIMIT = 2_000_000


@dataclass(frozen=True, order=True)
class NetPoint:
    """A net point identified by (level, integer grid coordinates)."""

    level: int
    grid: tuple[int, ...]
    coords: tuple[float, ...] = field(compare=False, hash=False, repr=False)

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    @property
    def key(self) -> bytes:
        # injective: fixed width little-endian int64 for level then each coordinate
        return np.asarray((self.level, *self.grid), dtype="<i8").tobytes()

    @classmethod
    def from_key(cls, key: bytes, family: "NetFamily") -> "NetPoint":
        raw = np.frombuffer(key, dtype="<i8")
        return family.net_point(int(raw[0]), raw[1:])


@dataclass(frozen=True)
class NetFamily:
    dimension: int
    levels: int

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("net dimension must be >= 1")
        if self.levels < 0:
            raise ValueError("net depth must be >= 0")

    # -----------------------------
    # Radii and grid geometry
    # -----------------------------
    @property
    def gamma(self) -> float:
        return 1.0 / math.sqrt(self.dimension)

    def rho(self, level: int) -> float:
        return 2.0 ** (-level)

    def packing_radius(self, level: int) -> float:
        if level == 0:
            return 1.0
        return self.gamma * self.rho(level)

    def pitch(self, level: int) -> float:
        return 2.0 * self.rho(level) / math.sqrt(self.dimension)

    def offset(self, level: int) -> float:
        return OFFSET_FACTOR * self.rho(level)

    def radius_bound(self, level: int) -> float:
        """Norm bound of level members."""
        if level == 0:
            return 0.0
        return 1.0 + 2.0 * self.rho(level)

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.levels:
            raise ValueError(f"level {level} outside 0..{self.levels}")

    def grid_to_coords(self, level: int, grid: np.ndarray) -> np.ndarray:
        g = np.asarray(grid, dtype=np.int64)
        if level == 0:
            return np.zeros(g.shape, dtype=float)
        return self.offset(level) + self.pitch(level) * g.astype(float)

    def net_point(self, level: int, grid) -> NetPoint:
        g = tuple(int(v) for v in np.asarray(grid, dtype=np.int64).reshape(-1))
        if len(g) != self.dimension:
            raise ValueError(f"grid vector has {len(g)} coordinates, expected {self.dimension}")
        coords = self.grid_to_coords(level, np.asarray(g))
        return NetPoint(level, g, tuple(float(c) for c in coords))

    @cached_property
    def root(self) -> NetPoint:
        return self.net_point(0, np.zeros(self.dimension, dtype=np.int64))

    # -----------------------------
    # Decoding
    # -----------------------------
    def decode_grid(self, level: int, X: np.ndarray) -> np.ndarray:
        """Integer grid coordinates of the closest level-`level` point of each row of X."""
        self._check_level(level)
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        if pts.shape[1] != self.dimension:
            raise ValueError(f"points have dimension {pts.shape[1]}, nets use {self.dimension}")
        if level == 0:
            return np.zeros(pts.shape, dtype=np.int64)

        # inputs come from B^d or from level + 1, whose members have norm <= 1 + rho_level
        norms = np.linalg.norm(pts, axis=1)
        if pts.shape[0] and float(norms.max()) > 1.0 + self.rho(level) + NORM_TOL:
            raise NormViolationError(
                f"norm {float(norms.max()):.12g} cannot be decoded at level {level}"
            )
        u = (pts - self.offset(level)) / self.pitch(level)
        # ceil(u - 1/2): nearest integer, exact halves go to the smaller one
        return np.ceil(u - 0.5).astype(np.int64)

    def decode(self, level: int, x) -> NetPoint:
        return self.net_point(level, self.decode_grid(level, np.asarray(x, dtype=float))[0])

    def decode_chain(self, X: np.ndarray) -> list[np.ndarray]:
        """
        Per-level grid coordinates of the representative chain for each row:
        entry i holds Psi_i(...Psi_T(x)...). Entry 0 is the root.
        """
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        chain: list[np.ndarray] = [np.zeros(0)] * (self.levels + 1)
        current = pts
        for level in range(self.levels, -1, -1):
            grid = self.decode_grid(level, current)
            chain[level] = grid
            current = self.grid_to_coords(level, grid)
        return chain

    # -----------------------------
    # Enumeration
    # -----------------------------
    def enumerate_ball(self, level: int, x, r: float) -> list[NetPoint]:
        """Level-`level` net points within distance r of x, sorted lexicographically."""
        self._check_level(level)
        center = np.asarray(x, dtype=float).reshape(-1)
        if level == 0:
            return [self.root] if float(np.linalg.norm(center)) <= r + _MEMBER_TOL else []

        grids = self._ball_grids(level, center, r)
        return [self.net_point(level, g) for g in grids]

    def _ball_grids(self, level: int, center: np.ndarray, r: float) -> np.ndarray:
        s = self.pitch(level)
        o = self.offset(level)
        lo = np.ceil((center - r - o) / s - _MEMBER_TOL).astype(np.int64)
        hi = np.floor((center + r - o) / s + _MEMBER_TOL).astype(np.int64)
        if np.any(hi < lo):
            return np.zeros((0, self.dimension), dtype=np.int64)
        box = math.prod(int(b - a + 1) for a, b in zip(lo, hi))
        if box > ENUM_LIMIT:
            raise SearchSpaceTooLargeError(
                f"level {level} enumeration scans {box} grid vectors in dimension {self.dimension}; "
                "use a smaller projected dimension"
            )
        axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]
        grids = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)
        coords = self.grid_to_coords(level, grids)
        near = np.linalg.norm(coords - center, axis=1) <= r * (1.0 + _MEMBER_TOL) + _MEMBER_TOL
        inside = np.linalg.norm(coords, axis=1) <= self.radius_bound(level) + _MEMBER_TOL
        grids = grids[near & inside]
        # ij meshgrid over ascending axes flattens in lexicographic order
        return grids

    def children(self, z: NetPoint) -> list[NetPoint]:
        if z.level >= self.levels:
            raise ValueError(f"node at level {z.level} is a leaf level of a depth-{self.levels} family")
        # the root's children are all of L_1, which reaches norm 1 + 2*rho_1
        r = self.radius_bound(1) if z.level == 0 else self.rho(z.level)
        grids = self._ball_grids(z.level + 1, z.point, r)
        if grids.shape[0] == 0:
            return []
        parents = self.decode_grid(z.level, self.grid_to_coords(z.level + 1, grids))
        mine = np.all(parents == np.asarray(z.grid, dtype=np.int64), axis=1)
        return [self.net_point(z.level + 1, g) for g in grids[mine]]

    # -----------------------------
    # Branching
    # -----------------------------
    def branching_bound(self) -> int:
        """Upper bound on the children of any node, the root included."""
        interior = math.ceil((1.0 + 2.0 / self.gamma) ** self.dimension)
        if self.levels == 0:
            return interior
        return max(interior, len(self.children(self.root)))
