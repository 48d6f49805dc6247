# schemas/reports.py

from typing import List, Literal

from pydantic import BaseModel


# ------------------------
# Coreset verification
# ------------------------
class CoresetViolationOut(BaseModel):
    index: int
    centers: List[List[float]]
    side: Literal["lower", "upper"]
    lhs: float
    rhs: float


class CoresetReportOut(BaseModel):
    gamma_observed: float
    t_observed: float
    passed: bool
    witnesses: List[CoresetViolationOut]
