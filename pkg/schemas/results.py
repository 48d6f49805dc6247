# schemas/results.py

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from schemas.trees import TreeStatsOut


# ------------------------
# Parameter echo
# ------------------------
class RunParamsOut(BaseModel):
    model: Literal["local", "shuffle", "exact"]
    variant: Literal["net-tree", "lsh"]
    n: int
    d: int
    k: int
    epsilon: float
    delta: float
    alpha: float
    beta: float
    seed: int

    # net-tree derivations (absent for the lsh variant)
    xi: Optional[float] = None
    alpha_tilde: Optional[float] = None
    beta_tilde: Optional[float] = None
    oracle_beta: Optional[float] = None
    c_dprime: Optional[float] = None
    d_prime: Optional[int] = None
    Lambda: Optional[float] = None
    gamma: Optional[float] = None
    theta: Optional[float] = None
    a: Optional[int] = None
    T: Optional[int] = None
    Gamma: Optional[int] = None
    node_budget: Optional[int] = None

    # lsh derivations
    lsh_levels: Optional[int] = None
    branch_threshold: Optional[float] = None
    split_levels: Optional[bool] = None


class ClusterOut(BaseModel):
    weight: float  # estimated cluster size
    vector_norm: float  # norm of the estimated cluster vector sum


# ------------------------
# Result file
# ------------------------
class RunResult(BaseModel):
    centers: List[List[float]]
    normalized_objective: float
    objective: float
    trivial_objective: float
    params: RunParamsOut
    tree: Optional[TreeStatsOut] = None
    clusters: List[ClusterOut] = Field(default_factory=list)
    clipped: int = 0
    quantization_bound: Optional[float] = None
    timings: Optional[Dict[str, float]] = None

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, exclude_none=True)


class BaselineResult(BaseModel):
    arm: Literal["trivial", "naive"]
    centers: List[List[float]]
    normalized_objective: float
    objective: float
    trivial_objective: float
    n: int
    d: int
    k: int
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    seed: int

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, exclude_none=True)
