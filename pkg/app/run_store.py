# app/run_store.py
"""Run registry: persist result files in `experiment_runs` and read them back."""

from __future__ import annotations

import json
import logging
from typing import Optional

from sqlalchemy.orm import Session

from app.core_types import WeightedPointSet
from models.runs import ExperimentRun, RunModel, RunVariant
from schemas.results import RunResult

logger = logging.getLogger(__name__)


def record_run(db: Session, result: RunResult, source: Optional[str] = None) -> ExperimentRun:
    p = result.params
    row = ExperimentRun(
        model=RunModel(p.model),
        variant=RunVariant(p.variant),
        seed=p.seed,
        n=p.n,
        d=p.d,
        k=p.k,
        epsilon=p.epsilon,
        delta=p.delta,
        normalized_objective=result.normalized_objective,
        trivial_objective=result.trivial_objective,
        result_json=result.to_json(),
        source=source,
    )
    db.add(row)
    try:
        db.commit()
    except Exception:
        db.rollback()
        raise
    db.refresh(row)
    logger.info("STORE: recorded run id=%s model=%s variant=%s", row.id, p.model, p.variant)
    return row


def list_runs(db: Session, limit: int = 100, model: Optional[str] = None) -> list[ExperimentRun]:
    q = db.query(ExperimentRun)
    if model is not None:
        q = q.filter(ExperimentRun.model == RunModel(model))
    return q.order_by(ExperimentRun.id.desc()).limit(limit).all()


def get_run(db: Session, run_id: int) -> Optional[ExperimentRun]:
    return db.get(ExperimentRun, run_id)


def run_result(row: ExperimentRun) -> RunResult:
    return RunResult.model_validate(json.loads(row.result_json))


def dataset_from_points(points: list[list[float]], weights: Optional[list[float]] = None) -> WeightedPointSet:
    if not points:
        raise ValueError("inline dataset is empty")
    return WeightedPointSet.from_points(points, weights)
