# app/core_types.py

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9
BRUTEFORCE_LIMIT = 10**6


# -----------------------------
# Errors
# -----------------------------
class DimensionMismatchError(ValueError):
    pass


class EmptyWeightError(ValueError):
    pass


class NormViolationError(ValueError):
    pass


class SearchSpaceTooLargeError(ValueError):
    pass


# -----------------------------
# Value objects
# -----------------------------
def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedPointSet:
    """
    Finite map point -> nonnegative weight.
    Rows of `points` are distinct; `weights[i]` belongs to `points[i]`.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2:
            raise DimensionMismatchError(f"points must be 2-D, got shape {pts.shape}")
        if w.shape != (pts.shape[0],):
            raise DimensionMismatchError(
                f"weights shape {w.shape} does not match {pts.shape[0]} points"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must have finite coordinates")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def from_points(
        cls,
        points: Sequence[Sequence[float]] | np.ndarray,
        weights: Sequence[float] | np.ndarray | None = None,
        dimension: int | None = None,
    ) -> "WeightedPointSet":
        """Builds a set from possibly repeated points, accumulating weight on duplicates."""
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            d = dimension if dimension is not None else (pts.shape[1] if pts.ndim == 2 else 0)
            return cls.empty(d)
        if pts.ndim == 1:
            pts = pts[None, :]
        w = np.ones(pts.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise DimensionMismatchError("one weight per point is required")
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        acc = np.zeros(uniq.shape[0])
        np.add.at(acc, inverse.reshape(-1), w)
        return cls(uniq, acc)

    @classmethod
    def empty(cls, dimension: int) -> "WeightedPointSet":
        return cls(np.zeros((0, dimension)), np.zeros(0))

    @property
    def dimension(self) -> int:
        return int(self.points.shape[1])

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def weight_of(self, point: Sequence[float]) -> float:
        p = np.asarray(point, dtype=float)
        hit = np.all(self.points == p, axis=1)
        return float(self.weights[hit].sum())

    def as_users(self) -> np.ndarray:
        """One row per user; weights must be whole counts."""
        counts = np.rint(self.weights)
        if not np.allclose(counts, self.weights, atol=1e-9):
            raise ValueError("user expansion needs integer weights")
        return np.repeat(self.points, counts.astype(np.int64), axis=0)

    def scaled(self, factor: float) -> "WeightedPointSet":
        return WeightedPointSet(self.points * factor, self.weights)

    def with_weights(self, weights: np.ndarray) -> "WeightedPointSet":
        return WeightedPointSet(self.points, weights)

    def same_as(self, other: "WeightedPointSet", tol: float = 0.0) -> bool:
        """Equality as weighted sets; zero-weight entries are ignored."""
        a = self._canonical()
        b = other._canonical()
        if a.points.shape != b.points.shape:
            return False
        return bool(
            np.array_equal(a.points, b.points) and np.allclose(a.weights, b.weights, atol=tol, rtol=0)
        )

    def _canonical(self) -> "WeightedPointSet":
        keep = self.weights > 0
        if not np.any(keep):
            return WeightedPointSet.empty(self.dimension)
        return WeightedPointSet.from_points(self.points[keep], self.weights[keep])


@dataclass(frozen=True)
class CenterSet:
    centers: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[None, :]
        if c.ndim != 2 or c.shape[0] == 0:
            raise ValueError("a center set needs at least one center")
        object.__setattr__(self, "centers", _frozen(c))

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.centers.shape[1])

    def as_lists(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.centers]


@dataclass(frozen=True)
class Partition:
    """Cluster index (0-based) for each support row of a WeightedPointSet."""

    assignment: np.ndarray
    k: int = field(default=0)

    def __post_init__(self) -> None:
        a = np.asarray(self.assignment, dtype=np.int64).copy()
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if self.k == 0:
            object.__setattr__(self, "k", int(a.max()) + 1 if a.size else 1)


# -----------------------------
# Validation helpers
# -----------------------------
def check_in_unit_ball(points: np.ndarray, tol: float = NORM_TOL) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return
    norms = np.linalg.norm(pts, axis=1)
    if np.any(norms > 1.0 + tol):
        worst = float(norms.max())
        raise NormViolationError(f"input point norm {worst:.12g} exceeds 1 + {tol}")


def _check_dims(S: WeightedPointSet, C: CenterSet) -> None:
    if S.size and S.dimension != C.dimension:
        raise DimensionMismatchError(
            f"point dimension {S.dimension} != center dimension {C.dimension}"
        )


def squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return cdist(np.atleast_2d(points), np.atleast_2d(centers), metric="sqeuclidean")


def nearest_centers(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # np.argmin keeps the first minimum: ties go to the lowest center index
    return np.argmin(squared_distances(points, centers), axis=1)


# -----------------------------
# Costs
# -----------------------------
def cost(S: WeightedPointSet, C: CenterSet) -> float:
    if S.size == 0:
        return 0.0
    _check_dims(S, C)
    d2 = squared_distances(S.points, C.centers).min(axis=1)
    return float(np.dot(S.weights, d2))


def partition_cost(S: WeightedPointSet, phi: Partition, C: CenterSet) -> float:
    if S.size == 0:
        return 0.0
    _check_dims(S, C)
    _check_partition(S, phi, C.k)
    diff = S.points - C.centers[phi.assignment]
    return float(np.dot(S.weights, np.einsum("ij,ij->i", diff, diff)))


def _check_partition(S: WeightedPointSet, phi: Partition, k: int) -> None:
    if phi.assignment.shape != (S.size,):
        raise ValueError(
            f"partition covers {phi.assignment.shape[0]} points, support has {S.size}"
        )
    if S.size and (phi.assignment.min() < 0 or phi.assignment.max() >= k):
        raise ValueError(f"partition indices must lie in [0, {k})")


def cluster_sums(
    S: WeightedPointSet, phi: Partition, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster (weight, weighted vector sum)."""
    weights = np.bincount(phi.assignment, weights=S.weights, minlength=k).astype(float)
    sums = np.zeros((k, S.dimension))
    np.add.at(sums, phi.assignment, S.points * S.weights[:, None])
    return weights, sums


def partition_opt_cost(S: WeightedPointSet, phi: Partition) -> tuple[float, CenterSet]:
    """cost_S(phi) together with its minimizing centers (per-cluster centroids)."""
    k = phi.k
    if S.size == 0:
        return 0.0, CenterSet(np.zeros((k, max(S.dimension, 1))))
    _check_partition(S, phi, k)
    weights, sums = cluster_sums(S, phi, k)
    centers = np.zeros((k, S.dimension))
    live = weights > 0
    centers[live] = sums[live] / weights[live, None]
    C = CenterSet(centers)
    return partition_cost(S, phi, C), C


def centroid(S: WeightedPointSet) -> np.ndarray:
    total = S.total_weight
    if total <= 0:
        raise EmptyWeightError("centroid of a weighted set with zero total weight")
    return (S.weights @ S.points) / total


def bottom_m(values: Iterable[float], m: int) -> float:
    vals = sorted(float(v) for v in values)
    if m < 0 or m > len(vals):
        raise ValueError(f"bottom_m needs 0 <= m <= {len(vals)}, got m={m}")
    return float(sum(vals[:m]))


# -----------------------------
# Non-private solver: weighted k-means++ and Lloyd
# -----------------------------
def kmeans_pp(
    S: WeightedPointSet,
    k: int,
    seed: int | np.random.SeedSequence | None = 0,
    lloyd_iters: int = 10,
) -> CenterSet:
    """
    Weighted D^2 seeding followed by `lloyd_iters` weighted Lloyd steps.
    Deterministic for a fixed seed. When k exceeds the support, centers repeat.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if S.size == 0:
        raise EmptyWeightError("k-means++ needs a nonempty support")

    rng = np.random.default_rng(seed)
    pts = S.points
    w = S.weights
    centers = np.empty((k, S.dimension))

    first_p = w / w.sum() if w.sum() > 0 else None
    centers[0] = pts[rng.choice(S.size, p=first_p)]
    closest = squared_distances(pts, centers[:1])[:, 0]

    for j in range(1, k):
        pot = w * closest
        total = pot.sum()
        if total > 0:
            idx = rng.choice(S.size, p=pot / total)
        else:
            idx = rng.integers(S.size)
        centers[j] = pts[idx]
        closest = np.minimum(closest, squared_distances(pts, centers[j : j + 1])[:, 0])

    for _ in range(lloyd_iters):
        labels = nearest_centers(pts, centers)
        cw, sums = cluster_sums(S, Partition(labels, k), k)
        live = cw > 0
        updated = centers.copy()
        updated[live] = sums[live] / cw[live, None]
        if np.array_equal(updated, centers):
            break
        centers = updated

    return CenterSet(centers)


def opt_bruteforce(
    S: WeightedPointSet, k: int, candidate_centers: Sequence[Sequence[float]] | np.ndarray
) -> float:
    cand = np.atleast_2d(np.asarray(candidate_centers, dtype=float))
    if k < 1:
        raise ValueError("k must be >= 1")
    if S.size == 0:
        return 0.0
    n_cand = cand.shape[0]
    if k > n_cand:
        k = n_cand
    if math.comb(n_cand, k) > BRUTEFORCE_LIMIT:
        raise SearchSpaceTooLargeError(
            f"C({n_cand}, {k}) exceeds the brute-force limit {BRUTEFORCE_LIMIT}"
        )
    if cand.shape[1] != S.dimension:
        raise DimensionMismatchError("candidate dimension does not match the point set")
    d2 = squared_distances(S.points, cand)
    best = math.inf
    for combo in itertools.combinations(range(n_cand), k):
        val = float(np.dot(S.weights, d2[:, combo].min(axis=1)))
        if val < best:
            best = val
    return best


# -----------------------------
# Dataset files
# -----------------------------
def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_dataset_csv(path: str | Path) -> WeightedPointSet:
    """
    One row per point. A header row is detected when its first cell is not
    numeric; a last header column named `weight` carries per-row weights.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"dataset {path} is empty")

    has_weight = False
    if not _is_number(rows[0][0].strip()):
        header = [c.strip().lower() for c in rows[0]]
        has_weight = header[-1] == "weight"
        rows = rows[1:]

    data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    if has_weight:
        pts, w = data[:, :-1], data[:, -1]
    else:
        pts, w = data, np.ones(data.shape[0])
    check_in_unit_ball(pts)
    logger.info("DATASET: loaded path=%s rows=%s dim=%s", path, data.shape[0], pts.shape[1])
    return WeightedPointSet.from_points(pts, w)


def write_dataset_csv(path: str | Path, points: np.ndarray, weights: np.ndarray | None = None) -> None:
    pts = np.atleast_2d(points)
    header = [f"x{i}" for i in range(pts.shape[1])]
    if weights is not None:
        header.append("weight")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(pts):
            cells = [format(float(v), ".17g") for v in row]
            if weights is not None:
                cells.append(format(float(weights[i]), ".17g"))
            writer.writerow(cells)
