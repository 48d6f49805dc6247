# schemas/runs.py

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class MixtureIn(BaseModel):
    n: int = Field(gt=0)
    d: int = Field(gt=0)
    k_true: int = Field(gt=0)
    r: float = Field(default=100.0, gt=2)
    seed: int = 0


# input: run parameters plus inline points or a mixture to generate
class RunCreate(BaseModel):
    model: Literal["local", "shuffle", "exact"] = "local"
    variant: Literal["net-tree", "lsh"] = "net-tree"
    k: int = Field(gt=0)
    epsilon: float = Field(default=1.0, gt=0)
    delta: float = Field(default=0.0, ge=0, lt=1)
    alpha: float = Field(default=1.0, gt=0, le=1)
    beta: float = Field(default=0.1, gt=0, lt=1)
    seed: int = 0
    dprime: Optional[int] = Field(default=None, gt=0)
    split_levels: bool = False

    points: Optional[List[List[float]]] = None
    weights: Optional[List[float]] = None
    mixture: Optional[MixtureIn] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.points is None) == (self.mixture is None):
            raise ValueError("give exactly one of points or mixture")
        if self.weights is not None and (self.points is None or len(self.weights) != len(self.points)):
            raise ValueError("weights need one entry per inline point")
        return self


# output (aligned with the DB row)
class RunOut(BaseModel):
    id: int
    model: str
    variant: str
    seed: int
    n: int
    d: int
    k: int
    epsilon: float
    delta: float
    normalized_objective: float
    trivial_objective: float
    source: Optional[str] = None
    created_at: datetime

    class Config:
        from_attributes = True


class RunDetailOut(RunOut):
    result: Dict[str, Any]
