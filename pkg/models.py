"""
SQLAlchemy ORM models for the turnaround prediction service.

One model:
  PredictionRecord — one served prediction, kept so live predictions can later
                     be compared with actual departures and port estimates

Default database: SQLite (turnaround.db).
Production: set DATABASE_URL env var to a PostgreSQL connection string and the
service will use that instead; no code changes required.
"""

from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, Integer, String
from sqlalchemy.orm import declarative_base


def _utcnow():
    """Return the current UTC time as a timezone-aware datetime."""
    return datetime.now(timezone.utc)


def _iso(dt: datetime | None) -> str | None:
    if dt is None:
        return None
    if dt.tzinfo is None:             # SQLite drops the offset; stored values are UTC
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.isoformat()


# db is kept as a module-level name so external imports (database.py, manage.py,
# migrations/env.py) can reference db.metadata for table creation.
db = declarative_base()


# ---------------------------------------------------------------------------
# PredictionRecord
# ---------------------------------------------------------------------------

class PredictionRecord(db):
    __tablename__ = 'prediction_records'

    id                  = Column(Integer, primary_key=True)
    call_id             = Column(String(100), nullable=False, index=True)
    vessel_id           = Column(String(100), nullable=True)
    arrival             = Column(DateTime(timezone=True), nullable=False)
    predicted_hours     = Column(Float, nullable=False)
    etd                 = Column(DateTime(timezone=True), nullable=False)
    port_estimate_hours = Column(Float, nullable=True)
    model_version       = Column(String(32), nullable=False)
    created_at          = Column(DateTime(timezone=True), nullable=False, default=_utcnow,
                                 index=True)

    def to_dict(self):
        return {
            'id':                  self.id,
            'call_id':             self.call_id,
            'vessel_id':           self.vessel_id,
            'arrival':             _iso(self.arrival),
            'predicted_hours':     self.predicted_hours,
            'etd':                 _iso(self.etd),
            'port_estimate_hours': self.port_estimate_hours,
            'model_version':       self.model_version,
            'created_at':          _iso(self.created_at),
        }

    def __repr__(self):
        return f'<PredictionRecord {self.call_id} {self.predicted_hours:.2f}h v={self.model_version}>'
