# app/transport.py
"""
Generalized (L2^2) Monge transport between weighted point sets, a brute-force
optimal-transport oracle for small instances and coreset verification.

Brute-force codomain note: a point y of S may be sent anywhere, but every
target outside support(S') pays the full L1 penalty w_S(y) no matter where it
lands, and the movement term is smallest (zero) when y stays put. Restricting
y to support(S') plus y itself therefore loses no optimal map.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from app.core_types import (
    BRUTEFORCE_LIMIT,
    CenterSet,
    DimensionMismatchError,
    Partition,
    SearchSpaceTooLargeError,
    WeightedPointSet,
    cost,
    opt_bruteforce,
    partition_cost,
)
from schemas.reports import CoresetReportOut, CoresetViolationOut

logger = logging.getLogger(__name__)

REL_TOL = 1e-9


@dataclass(frozen=True)
class TransportMap:
    """targets[i] is the image of S.points[i]."""

    targets: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.targets, dtype=float, copy=True)
        t.setflags(write=False)
        object.__setattr__(self, "targets", t)

    @classmethod
    def identity(cls, S: WeightedPointSet) -> "TransportMap":
        return cls(S.points)


def _check_map(psi: TransportMap, S: WeightedPointSet) -> None:
    if psi.targets.shape != S.points.shape:
        raise DimensionMismatchError(
            f"transport map has shape {psi.targets.shape}, support is {S.points.shape}"
        )


def mt_with_map(psi: TransportMap, S: WeightedPointSet, S2: WeightedPointSet) -> float:
    _check_map(psi, S)
    movement = 0.0
    if S.size:
        diff = psi.targets - S.points
        movement = float(np.dot(S.weights, np.einsum("ij,ij->i", diff, diff)))

    # pushforward mass vs S2 mass over support(S2) ∪ image(psi)
    mass: dict[tuple[float, ...], list[float]] = {}
    for target, w in zip(psi.targets, S.weights):
        mass.setdefault(tuple(target.tolist()), [0.0, 0.0])[0] += float(w)
    for point, w in zip(S2.points, S2.weights):
        mass.setdefault(tuple(point.tolist()), [0.0, 0.0])[1] += float(w)
    mismatch = sum(abs(pushed - held) for pushed, held in mass.values())
    return movement + mismatch


def mt_bruteforce(S: WeightedPointSet, S2: WeightedPointSet) -> tuple[float, TransportMap]:
    """Exact minimum of mt_with_map with an argmin witness."""
    m, s2 = S.size, S2.size
    if (s2 + 1) ** m > BRUTEFORCE_LIMIT:
        raise SearchSpaceTooLargeError(
            f"({s2}+1)^{m} maps exceed the brute-force limit {BRUTEFORCE_LIMIT}"
        )
    if m == 0:
        return float(S2.weights.sum()), TransportMap(np.zeros((0, S2.dimension)))
    if s2 and S.dimension != S2.dimension:
        raise DimensionMismatchError("transport between sets of different dimension")

    # option j < s2 sends y to S2.points[j]; option s2 keeps y in place
    same_loc = np.full(m, -1)
    for i, y in enumerate(S.points):
        hit = np.flatnonzero(np.all(S2.points == y, axis=1)) if s2 else np.array([], dtype=int)
        if hit.size:
            same_loc[i] = int(hit[0])

    option_lists = [
        list(range(s2)) if same_loc[i] >= 0 else list(range(s2)) + [s2] for i in range(m)
    ]
    choices = np.array(list(itertools.product(*option_lists)), dtype=np.int64).reshape(-1, m)
    n_maps = choices.shape[0]

    targets_all = np.vstack([S2.points, np.zeros((1, S.dimension))]) if s2 else np.zeros((1, S.dimension))
    move = np.zeros((m, s2 + 1))
    for i, y in enumerate(S.points):
        if s2:
            diff = S2.points - y
            move[i, :s2] = S.weights[i] * np.einsum("ij,ij->i", diff, diff)
        move[i, s2] = 0.0

    rows = np.arange(n_maps)
    movement = np.zeros(n_maps)
    pushed = np.zeros((n_maps, s2 + 1))
    for i in range(m):
        movement += move[i, choices[:, i]]
        np.add.at(pushed, (rows, choices[:, i]), S.weights[i])

    # kept-in-place points sit outside support(S2) and pay their full weight
    mismatch = np.abs(pushed[:, :s2] - S2.weights[None, :]).sum(axis=1) + pushed[:, s2]
    total = movement + mismatch
    best = int(np.argmin(total))

    targets = np.empty_like(S.points)
    for i in range(m):
        j = choices[best, i]
        targets[i] = S.points[i] if j == s2 else targets_all[j]
    logger.debug("TRANSPORT: bruteforce maps=%s best=%s", n_maps, float(total[best]))
    return float(total[best]), TransportMap(targets)


# -----------------------------
# Coreset verification
# -----------------------------
@dataclass(frozen=True)
class CoresetViolation:
    index: int
    centers: CenterSet
    side: str
    lhs: float
    rhs: float


@dataclass
class CoresetReport:
    gamma_observed: float
    t_observed: float
    witnesses: list[CoresetViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.witnesses

    def to_schema(self) -> CoresetReportOut:
        return CoresetReportOut(
            gamma_observed=self.gamma_observed,
            t_observed=self.t_observed,
            passed=self.passed,
            witnesses=[
                CoresetViolationOut(
                    index=v.index,
                    centers=v.centers.as_lists(),
                    side=v.side,
                    lhs=v.lhs,
                    rhs=v.rhs,
                )
                for v in self.witnesses
            ],
        )


def coreset_check(
    S: WeightedPointSet,
    S2: WeightedPointSet,
    k: int,
    gamma: float,
    t: float,
    center_candidates: Sequence[CenterSet],
) -> CoresetReport:
    gamma_obs = 0.0
    t_obs = 0.0
    witnesses: list[CoresetViolation] = []
    for idx, C in enumerate(center_candidates):
        if C.k != k:
            raise ValueError(f"candidate {idx} has {C.k} centers, expected {k}")
        c_s = cost(S, C)
        c_s2 = cost(S2, C)
        slack = REL_TOL * max(1.0, c_s, c_s2)

        gap = abs(c_s2 - c_s)
        t_obs = max(t_obs, gap - gamma * c_s)
        if c_s > 0:
            gamma_obs = max(gamma_obs, (gap - t) / c_s)

        low = (1.0 - gamma) * c_s - t
        if low > c_s2 + slack:
            witnesses.append(CoresetViolation(idx, C, "lower", low, c_s2))
        high = (1.0 + gamma) * c_s + t
        if c_s2 > high + slack:
            witnesses.append(CoresetViolation(idx, C, "upper", c_s2, high))

    return CoresetReport(max(gamma_obs, 0.0), max(t_obs, 0.0), witnesses)


def candidate_center_sets(
    S: WeightedPointSet,
    S2: WeightedPointSet,
    k: int,
    grid_pitch: float = 0.25,
    limit: int = 20_000,
    seed: int = 0,
) -> list[CenterSet]:
    """
    All k-subsets of support(S) ∪ support(S2), plus k-subsets drawn from an
    axis grid of the given pitch inside the unit ball when d <= 3.
    """
    pts = [p for p in S.points] + [p for p in S2.points]
    support = np.unique(np.array(pts), axis=0) if pts else np.zeros((0, S.dimension))
    out: list[CenterSet] = []
    if support.shape[0]:
        kk = min(k, support.shape[0])
        for combo in itertools.combinations(range(support.shape[0]), kk):
            centers = support[list(combo)]
            if kk < k:
                centers = np.vstack([centers, np.repeat(centers[:1], k - kk, axis=0)])
            out.append(CenterSet(centers))
            if len(out) >= limit:
                return out

    d = S.dimension
    if d > 3:
        return out
    axis = np.arange(-1.0, 1.0 + 1e-12, grid_pitch)
    grid = np.array(list(itertools.product(axis, repeat=d)))
    grid = grid[np.linalg.norm(grid, axis=1) <= 1.0 + 1e-12]
    budget = limit - len(out)
    if budget <= 0 or grid.shape[0] < k:
        return out
    if math.comb(grid.shape[0], k) <= budget:
        for combo in itertools.combinations(range(grid.shape[0]), k):
            out.append(CenterSet(grid[list(combo)]))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(budget):
            out.append(CenterSet(grid[rng.choice(grid.shape[0], size=k, replace=False)]))
    return out


def transport_implies_coreset(
    S: WeightedPointSet,
    S2: WeightedPointSet,
    xi: float,
    t: float,
    k: int,
    candidates: Sequence[CenterSet] | None = None,
) -> bool:
    """
    Small transport cost relative to opt implies a (xi, 4(1+2/xi)t)-coreset.
    opt is lower-bounded by half the best support-restricted solution, so a
    true premise here is a true premise for the continuous optimum.
    """
    mt, _ = mt_bruteforce(S, S2)
    opt_lb = 0.5 * opt_bruteforce(S, k, S.points) if S.size else 0.0
    premise = mt <= xi / (8.0 * (1.0 + 2.0 / xi)) * opt_lb + t
    if not premise:
        return True
    if candidates is None:
        candidates = candidate_center_sets(S, S2, k)
    report = coreset_check(S, S2, k, xi, 4.0 * (1.0 + 2.0 / xi) * t, candidates)
    if not report.passed:
        logger.warning("TRANSPORT: transport premise held but coreset check failed t=%s", t)
    return report.passed


def transport_cost_bounds(
    S: WeightedPointSet,
    S2: WeightedPointSet,
    psi: TransportMap,
    phi_of: Callable[[np.ndarray], np.ndarray],
    C: CenterSet,
    xi: float,
) -> tuple[tuple[float, float], tuple[float, float]]:
    """
    Both sides of the two transport-to-cost inequalities:
      cost_S(phi∘psi, C) <= (1+xi) cost_S2(phi, C) + 4(1+1/xi) mt(psi, S, S2)
      cost_S2(C)         <= (1+xi) cost_S(C)       + 4(1+1/xi) mt(psi, S, S2)
    `phi_of` labels an array of points with cluster indices.
    """
    mt = mt_with_map(psi, S, S2)
    extra = 4.0 * (1.0 + 1.0 / xi) * mt
    composed = partition_cost(S, Partition(phi_of(psi.targets), C.k), C) if S.size else 0.0
    on_s2 = partition_cost(S2, Partition(phi_of(S2.points), C.k), C) if S2.size else 0.0
    first = (composed, (1.0 + xi) * on_s2 + extra)
    second = (cost(S2, C), (1.0 + xi) * cost(S, C) + extra)
    return first, second
