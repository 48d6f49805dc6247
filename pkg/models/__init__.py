from sqlalchemy.orm import declarative_base

Base = declarative_base()

# --------------------------------------------------
# Run registry
# --------------------------------------------------
from .runs import ExperimentRun  # noqa: F401
