# schemas/trees.py

from typing import List

from pydantic import BaseModel


class TreeStatsOut(BaseModel):
    nodes: int
    leaves: int
    depth: int
    taus: List[int]
    node_budget: int


class TreeNodeOut(BaseModel):
    level: int
    grid: List[int]
    f: float
    leaf: bool
    parent: int  # -1 for the root


class TreeDumpOut(BaseModel):
    nodes: List[TreeNodeOut]
    stats: TreeStatsOut
