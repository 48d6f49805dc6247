# routers/runs.py

import json
import logging
from typing import List, Literal, Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from app.bench_service import MixtureConfig, execute_run, generate_mixture
from app.core_types import check_in_unit_ball
from app.db import get_db
from app.run_store import dataset_from_points, get_run, list_runs, record_run
from schemas.runs import RunCreate, RunDetailOut, RunOut

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/runs", tags=["Runs"])


def _detail(row) -> RunDetailOut:
    out = RunOut.model_validate(row)
    return RunDetailOut(**out.model_dump(), result=json.loads(row.result_json))


# ---------------------------------------------------------
# POST /runs
# Runs synchronously, stores the result and returns it.
# ---------------------------------------------------------
@router.post("", response_model=RunDetailOut, status_code=201)
def create_run(payload: RunCreate, db: Session = Depends(get_db)):
    try:
        if payload.mixture is not None:
            m = payload.mixture
            dataset = generate_mixture(MixtureConfig(k_true=m.k_true, n=m.n, d=m.d, r=m.r, seed=m.seed))
            source = "mixture"
        else:
            dataset = dataset_from_points(payload.points, payload.weights)
            check_in_unit_ball(dataset.points)
            source = "inline"

        result = execute_run(
            dataset,
            payload.model,
            payload.k,
            payload.epsilon,
            delta=payload.delta,
            alpha=payload.alpha,
            beta=payload.beta,
            seed=payload.seed,
            variant=payload.variant,
            dprime=payload.dprime,
            split_levels=payload.split_levels,
        )
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))

    row = record_run(db, result, source=source)
    return _detail(row)


# ---------------------------------------------------------
# GET /runs
# ---------------------------------------------------------
@router.get("", response_model=List[RunOut])
def read_runs(
    limit: int = Query(100, ge=1, le=1000),
    model: Optional[Literal["local", "shuffle", "exact"]] = None,
    db: Session = Depends(get_db),
):
    return list_runs(db, limit=limit, model=model)


# ---------------------------------------------------------
# GET /runs/{run_id}
# ---------------------------------------------------------
@router.get("/{run_id}", response_model=RunDetailOut)
def read_run(run_id: int, db: Session = Depends(get_db)):
    row = get_run(db, run_id)
    if not row:
        raise HTTPException(status_code=404, detail="Run not found")
    return _detail(row)
