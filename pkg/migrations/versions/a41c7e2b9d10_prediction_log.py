"""prediction log

Revision ID: a41c7e2b9d10
Revises: 
Create Date: 2026-10-18 09:12:44.381204

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = 'a41c7e2b9d10'
down_revision: Union[str, None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    op.create_table('prediction_records',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('call_id', sa.String(length=100), nullable=False),
    sa.Column('vessel_id', sa.String(length=100), nullable=True),
    sa.Column('arrival', sa.DateTime(timezone=True), nullable=False),
    sa.Column('predicted_hours', sa.Float(), nullable=False),
    sa.Column('etd', sa.DateTime(timezone=True), nullable=False),
    sa.Column('port_estimate_hours', sa.Float(), nullable=True),
    sa.Column('model_version', sa.String(length=32), nullable=False),
    sa.Column('created_at', sa.DateTime(timezone=True), nullable=False),
    sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_prediction_records_call_id'), 'prediction_records', ['call_id'], unique=False)
    op.create_index(op.f('ix_prediction_records_created_at'), 'prediction_records', ['created_at'], unique=False)


def downgrade() -> None:
    op.drop_index(op.f('ix_prediction_records_created_at'), table_name='prediction_records')
    op.drop_index(op.f('ix_prediction_records_call_id'), table_name='prediction_records')
    op.drop_table('prediction_records')
