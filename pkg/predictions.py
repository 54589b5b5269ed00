import logging

from fastapi import APIRouter, Depends, Query
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from database import get_db
from models import PredictionRecord

logger = logging.getLogger(__name__)

predictions_router = APIRouter(prefix='/predictions', tags=['predictions'])


# ── Helpers ───────────────────────────────────────────────────────────────────

def log_prediction(db: Session, **fields) -> PredictionRecord:
    record = PredictionRecord(**fields)
    db.add(record)
    db.commit()
    return record


def recent_predictions(db: Session, limit: int) -> list[PredictionRecord]:
    return (
        db.query(PredictionRecord)
        .order_by(PredictionRecord.created_at.desc(), PredictionRecord.id.desc())
        .limit(limit)
        .all()
    )


# ── Routes ────────────────────────────────────────────────────────────────────

@predictions_router.get('')
async def list_predictions(
    limit: int = Query(50, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    records = await run_in_threadpool(recent_predictions, db, limit)
    return {'predictions': [r.to_dict() for r in records]}
