# app/net_tree.py
"""
Pruned net tree: top-down construction from a frequency oracle, the
representative map and the weighted representative set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from app.core_types import WeightedPointSet, bottom_m
from app.dp_oracles.base import FrequencyOracle
from app.nets import NetFamily, NetPoint
from schemas.trees import TreeDumpOut, TreeNodeOut, TreeStatsOut

logger = logging.getLogger(__name__)


def _ceil_power(base: float, exponent: int) -> int:
    try:
        return math.ceil(base**exponent)
    except OverflowError:
        # beyond float range the integer power of the rounded-up base still bounds it
        return math.ceil(base) ** exponent


@dataclass(frozen=True)
class TreeParams:
    k: int
    xi: float
    n: int
    dimension: int
    branching: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if self.n < 0:
            raise ValueError("n must be >= 0")

    @classmethod
    def for_run(cls, n: int, k: int, xi: float, dimension: int) -> tuple["TreeParams", NetFamily]:
        """Parameters plus the matching net family, with the realized branching bound."""
        draft = cls(k=k, xi=xi, n=n, dimension=dimension)
        family = NetFamily(dimension, draft.T)
        return cls(k=k, xi=xi, n=n, dimension=dimension, branching=family.branching_bound()), family

    @property
    def gamma(self) -> float:
        return 1.0 / math.sqrt(self.dimension)

    @property
    def theta(self) -> float:
        return 8.0 * math.sqrt((1.0 + 2.0 / self.xi) / self.xi)

    @property
    def a(self) -> int:
        return _ceil_power(1.0 + (2.0 + self.theta) / self.gamma, self.dimension)

    @property
    def Gamma(self) -> int:
        return max(1, math.ceil(math.log2(self.n))) if self.n > 1 else 1

    @property
    def T(self) -> int:
        return max(1, math.ceil(0.5 * math.log2(self.n))) if self.n > 1 else 1

    @property
    def node_budget(self) -> int:
        return 1 + self.branching * self.T * self.Gamma * self.k * self.a


# -----------------------------
# Threshold
# -----------------------------
def compute_threshold(freqs: Sequence[float] | np.ndarray, k: int, a: int, Gamma: int) -> int:
    f = np.asarray(freqs, dtype=float)
    if f.size > 1 and np.any(np.diff(f) < 0):
        raise ValueError("frequencies must be sorted ascending")
    m = int(f.size)
    ka = k * a
    prefix = np.concatenate([[0.0], np.cumsum(f)])
    for j in range(1, min(Gamma, m // ka) + 1):
        if prefix[m - (j - 1) * ka] <= 2.0 * prefix[m - j * ka]:
            return (j - 1) * ka
    return min(m, Gamma * ka)


# -----------------------------
# Tree
# -----------------------------
@dataclass
class NetTree:
    nodes: list[NetPoint] = field(default_factory=list)
    parents: list[int] = field(default_factory=list)
    freqs: list[float] = field(default_factory=list)
    leaf: list[bool] = field(default_factory=list)
    taus: list[int] = field(default_factory=list)
    node_budget: int = 0
    _index: dict[bytes, int] = field(default_factory=dict, repr=False)

    def _add(self, z: NetPoint, parent: int, f: float) -> int:
        idx = len(self.nodes)
        self.nodes.append(z)
        self.parents.append(parent)
        self.freqs.append(max(float(f), 0.0))
        self.leaf.append(True)
        self._index[z.key] = idx
        return idx

    def __len__(self) -> int:
        return len(self.nodes)

    def index_of(self, z: NetPoint) -> int | None:
        return self._index.get(z.key)

    def __contains__(self, z: NetPoint) -> bool:
        return z.key in self._index

    def is_leaf(self, z: NetPoint) -> bool:
        idx = self._index.get(z.key)
        return idx is not None and self.leaf[idx]

    @property
    def root(self) -> NetPoint:
        return self.nodes[0]

    @property
    def depth(self) -> int:
        return max(z.level for z in self.nodes) if self.nodes else 0

    def level_nodes(self, level: int) -> list[NetPoint]:
        return [z for z in self.nodes if z.level == level]

    def leaf_indices(self) -> list[int]:
        return [i for i, is_leaf in enumerate(self.leaf) if is_leaf]

    def leaves(self) -> list[NetPoint]:
        return [self.nodes[i] for i in self.leaf_indices()]

    def stats(self) -> TreeStatsOut:
        return TreeStatsOut(
            nodes=len(self.nodes),
            leaves=len(self.leaf_indices()),
            depth=self.depth,
            taus=list(self.taus),
            node_budget=self.node_budget,
        )

    def dump(self) -> TreeDumpOut:
        return TreeDumpOut(
            nodes=[
                TreeNodeOut(
                    level=z.level,
                    grid=list(z.grid),
                    f=self.freqs[i],
                    leaf=self.leaf[i],
                    parent=self.parents[i],
                )
                for i, z in enumerate(self.nodes)
            ],
            stats=self.stats(),
        )


def build_tree(
    family: NetFamily,
    params: TreeParams,
    oracle: FrequencyOracle,
    root_frequency: float | None = None,
) -> NetTree:
    """
    Level by level: sort by estimated frequency (ties by net point order),
    expand the tau highest nodes with their full children sets.
    """
    tree = NetTree(node_budget=params.node_budget)
    root_f = params.n if root_frequency is None else root_frequency
    tree._add(family.root, -1, root_f)

    level_idx = [0]
    for level in range(family.levels):
        order = sorted(level_idx, key=lambda i: (tree.freqs[i], tree.nodes[i]))
        sorted_f = [tree.freqs[i] for i in order]
        tau = compute_threshold(sorted_f, params.k, params.a, params.Gamma)
        tree.taus.append(tau)

        expanded = [order[len(order) - 1 - j] for j in range(tau)]
        new_nodes: list[NetPoint] = []
        new_parents: list[int] = []
        for idx in expanded:
            kids = family.children(tree.nodes[idx])
            tree.leaf[idx] = False
            new_nodes.extend(kids)
            new_parents.extend([idx] * len(kids))

        if len(tree) + len(new_nodes) > params.node_budget:
            raise RuntimeError(
                f"tree would hold {len(tree) + len(new_nodes)} nodes, budget is {params.node_budget}"
            )
        f_new = oracle.frequencies([z.key for z in new_nodes]) if new_nodes else np.zeros(0)
        level_idx = [tree._add(z, p, f) for z, p, f in zip(new_nodes, new_parents, f_new)]
        logger.info(
            "TREE: level=%s nodes=%s tau=%s expanded=%s children=%s",
            level,
            len(order),
            tau,
            len(expanded),
            len(new_nodes),
        )
        if not level_idx:
            break

    return tree


# -----------------------------
# Representatives
# -----------------------------
def representative_chain(family: NetFamily, x) -> list[NetPoint]:
    """[Psi_T(x), Psi_{T-1}(Psi_T(x)), ..., root]."""
    chain = family.decode_chain(np.asarray(x, dtype=float).reshape(1, -1))
    return [family.net_point(level, chain[level][0]) for level in range(family.levels, -1, -1)]


def representative_leaves(tree: NetTree, family: NetFamily, X: np.ndarray) -> np.ndarray:
    """Tree index of the representative leaf of every row of X."""
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    chain = family.decode_chain(pts)
    out = np.full(pts.shape[0], -1, dtype=np.int64)
    keys = [
        np.concatenate(
            [np.full((pts.shape[0], 1), level, dtype="<i8"), chain[level].astype("<i8")], axis=1
        )
        for level in range(family.levels + 1)
    ]
    for row in range(pts.shape[0]):
        for level in range(family.levels + 1):
            idx = tree._index.get(keys[level][row].tobytes())
            if idx is None:
                raise RuntimeError(f"representative chain of row {row} leaves the tree at level {level}")
            if tree.leaf[idx]:
                out[row] = idx
                break
        else:
            raise RuntimeError(f"representative chain of row {row} never reaches a leaf")
    return out


def representative_map(tree: NetTree, family: NetFamily, x) -> NetPoint:
    idx = representative_leaves(tree, family, np.asarray(x, dtype=float).reshape(1, -1))[0]
    return tree.nodes[int(idx)]


def representative_set(tree: NetTree, oracle: FrequencyOracle | None = None) -> WeightedPointSet:
    leaf_idx = tree.leaf_indices()
    if not leaf_idx:
        return WeightedPointSet.empty(len(tree.root.grid))
    points = np.array([tree.nodes[i].point for i in leaf_idx])
    if oracle is None:
        weights = np.array([tree.freqs[i] for i in leaf_idx])
    else:
        weights = np.maximum(oracle.frequencies([tree.nodes[i].key for i in leaf_idx]), 0.0)
    return WeightedPointSet(points, weights)


def quantization_bound(tree: NetTree, family: NetFamily) -> float:
    """Sum over leaves of f_z * 4 * rho_level(z)^2."""
    return float(
        sum(tree.freqs[i] * 4.0 * family.rho(tree.nodes[i].level) ** 2 for i in tree.leaf_indices())
    )


def opt_lower_bound(
    tree: NetTree,
    level: int,
    f: Mapping[bytes, float],
    k: int,
    a: int,
    b: int,
    theta: float,
) -> float:
    nodes = tree.level_nodes(level)
    if len(nodes) < k * a + b:
        raise ValueError(f"level {level} has {len(nodes)} nodes, need at least {k * a + b}")
    r = theta * 2.0 ** (-level)
    return r * r * bottom_m([f.get(z.key, 0.0) for z in nodes], b)
