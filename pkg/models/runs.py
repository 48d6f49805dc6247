# models/runs.py

import enum

from sqlalchemy import Column, DateTime, Enum, Float, Integer, String, Text
from sqlalchemy.sql import func

from models import Base


class RunModel(str, enum.Enum):
    LOCAL = "local"
    SHUFFLE = "shuffle"
    EXACT = "exact"


class RunVariant(str, enum.Enum):
    NET_TREE = "net-tree"
    LSH = "lsh"


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)

    model = Column(
        Enum(RunModel, name="run_model", values_callable=lambda e: [m.value for m in e]),
        nullable=False,
        index=True,
    )
    variant = Column(
        Enum(RunVariant, name="run_variant", values_callable=lambda e: [v.value for v in e]),
        nullable=False,
        default=RunVariant.NET_TREE,
    )
    seed = Column(Integer, nullable=False)

    # echo of the request; the full result JSON is kept verbatim
    n = Column(Integer, nullable=False)
    d = Column(Integer, nullable=False)
    k = Column(Integer, nullable=False)
    epsilon = Column(Float, nullable=False)
    delta = Column(Float, nullable=False, default=0.0)

    normalized_objective = Column(Float, nullable=False)
    trivial_objective = Column(Float, nullable=False)
    result_json = Column(Text, nullable=False)

    # dataset origin: "inline", "mixture" or a csv path
    source = Column(String, nullable=True)

    created_at = Column(
        DateTime(timezone=True),
        server_default=func.now(),
        nullable=False,
    )
