"""create experiment_runs table

Revision ID: 4f2a9c1d7e30
Revises:
Create Date: 2026-10-19 10:00:00.000000
"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa
from sqlalchemy import inspect


# revision identifiers, used by Alembic.
revision: str = "4f2a9c1d7e30"
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


TABLE_NAME = "experiment_runs"
MODEL_VALUES = ("local", "shuffle", "exact")
VARIANT_VALUES = ("net-tree", "lsh")


def upgrade() -> None:
    bind = op.get_bind()
    insp = inspect(bind)

    # idempotent: dev databases may already have it from create_all
    if TABLE_NAME in insp.get_table_names():
        return

    op.create_table(
        TABLE_NAME,
        sa.Column("id", sa.Integer(), primary_key=True),
        sa.Column("model", sa.Enum(*MODEL_VALUES, name="run_model"), nullable=False),
        sa.Column("variant", sa.Enum(*VARIANT_VALUES, name="run_variant"), nullable=False),
        sa.Column("seed", sa.Integer(), nullable=False),
        sa.Column("n", sa.Integer(), nullable=False),
        sa.Column("d", sa.Integer(), nullable=False),
        sa.Column("k", sa.Integer(), nullable=False),
        sa.Column("epsilon", sa.Float(), nullable=False),
        sa.Column("delta", sa.Float(), nullable=False),
        sa.Column("normalized_objective", sa.Float(), nullable=False),
        sa.Column("trivial_objective", sa.Float(), nullable=False),
        sa.Column("result_json", sa.Text(), nullable=False),
        sa.Column("source", sa.String(), nullable=True),
        sa.Column(
            "created_at",
            sa.DateTime(timezone=True),
            server_default=sa.func.now(),
            nullable=False,
        ),
    )
    op.create_index("ix_experiment_runs_id", TABLE_NAME, ["id"])
    op.create_index("ix_experiment_runs_model", TABLE_NAME, ["model"])


def downgrade() -> None:
    op.drop_index("ix_experiment_runs_model", table_name=TABLE_NAME)
    op.drop_index("ix_experiment_runs_id", table_name=TABLE_NAME)
    op.drop_table(TABLE_NAME)
    bind = op.get_bind()
    if bind.dialect.name == "postgresql":
        sa.Enum(name="run_variant").drop(bind, checkfirst=True)
        sa.Enum(name="run_model").drop(bind, checkfirst=True)
