#!/usr/bin/env python3
"""
Turnaround prediction service — HTTP API (FastAPI, async)

- POST /predict      raw port-call fields → predicted turnaround hours + ETD
- GET  /health       liveness + whether a model snapshot is loaded
- GET  /model/info   version, schema, training time, importances, last load error
- POST /model/reload hot-swap the model snapshot (in-flight requests keep the old one)
- GET  /predictions  recent prediction log (predictions.py)

The model is held in an immutable snapshot (snapshot.py); each request reads
the current snapshot once and uses it throughout, so every response is
attributable to exactly one model version.
"""

import logging
import os
from contextlib import asynccontextmanager
from datetime import timedelta

from dotenv import load_dotenv
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import ValidationError
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from database import get_db, init_db
from errors import TurnaroundError
from features import DEFAULT_PORT_TZ
from portcalls import PortCall
from predictions import log_prediction, predictions_router
from redis_client import get_redis
from schemas import PredictRequest, PredictResponse, ReloadRequest
from snapshot import ModelSnapshot, SnapshotStore, predict_call

# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

load_dotenv(os.path.join(os.path.dirname(__file__), '.env'))

logging.basicConfig(
    level=os.getenv('LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s [%(levelname)s] %(message)s',
)
logger = logging.getLogger(__name__)

PORT_TIMEZONE          = os.getenv('PORT_TIMEZONE', DEFAULT_PORT_TZ)
MODEL_PATH             = os.getenv('MODEL_PATH', '').strip() or None
CALENDAR_PATH          = os.getenv('CALENDAR_PATH', '').strip() or None
PREDICTION_LOG_ENABLED = os.getenv('PREDICTION_LOG_ENABLED', 'true').lower() in ('1', 'true', 'yes')

store = SnapshotStore(tz=PORT_TIMEZONE)


# ---------------------------------------------------------------------------
# FastAPI application
# ---------------------------------------------------------------------------

@asynccontextmanager
async def _lifespan(app: FastAPI):
    """Create the prediction log table and load the initial snapshot.

    A missing or broken model does not stop the service: /predict answers 503
    and /model/info shows the load error until /model/reload succeeds.
    """
    await run_in_threadpool(init_db)
    if get_redis() is None:
        logger.warning('Redis unavailable; /model/reload only affects the worker that serves it')
    if MODEL_PATH:
        try:
            await run_in_threadpool(store.load, MODEL_PATH, CALENDAR_PATH)
        except Exception:
            logger.error('Starting without a model; fix %s and call /model/reload', MODEL_PATH)
    else:
        logger.warning('MODEL_PATH not set; /predict returns 503 until /model/reload')
    yield
    logger.info('Application shutdown.')


app = FastAPI(title='Turnaround Prediction API', lifespan=_lifespan)

# ── CORS ─────────────────────────────────────────────────────────────────────
# Set CORS_ORIGINS (comma separated) when a browser front end on another
# origin calls the API; with nothing set, cross-origin requests are refused.
_cors_origins = [
    o.strip()
    for o in os.getenv('CORS_ORIGINS', '').split(',')
    if o.strip()
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=_cors_origins,
    allow_credentials=False,
    allow_methods=['GET', 'POST'],
    allow_headers=['*'],
)

# ── Security headers ──────────────────────────────────────────────────────────
# JSON only: no scripts, styles or frames are ever served.
_CSP = "default-src 'none'; frame-ancestors 'none'; base-uri 'none';"


@app.middleware('http')
async def security_headers(request: Request, call_next):
    response = await call_next(request)
    response.headers['X-Content-Type-Options']  = 'nosniff'
    response.headers['X-Frame-Options']         = 'DENY'
    response.headers['Referrer-Policy']         = 'no-referrer'
    response.headers['Cache-Control']           = 'no-store'
    if request.url.path not in ('/docs', '/redoc', '/openapi.json'):
        response.headers['Content-Security-Policy'] = _CSP
    return response


# ── Map HTTPException → { "error": "..." } ────────────────────────────────────
@app.exception_handler(HTTPException)
async def http_exception_handler(request: Request, exc: HTTPException):
    return JSONResponse(status_code=exc.status_code, content={'error': exc.detail})


# ── Map request validation → 400 { "error", "fields" } ────────────────────────
def _field_errors(errors) -> dict[str, str]:
    fields = {}
    for err in errors:
        loc = [str(p) for p in err.get('loc', ()) if p != 'body']
        fields.setdefault('.'.join(loc) or 'body', err.get('msg', 'invalid value'))
    return fields


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    return JSONResponse(status_code=400,
                        content={'error': 'Invalid request', 'fields': _field_errors(exc.errors())})


# ── Router registration ───────────────────────────────────────────────────────
app.include_router(predictions_router)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def handle_predict(request: PredictRequest, snapshot: ModelSnapshot) -> PredictResponse:
    """Featurize one request exactly as training does, predict, derive the ETD."""
    call = PortCall(
        call_id   = request.call_id or 'request',
        vessel_id = request.vessel_id or 'unknown',
        arrival   = request.arrival,
        unload    = request.unload,
        load      = request.load,
    )
    hours, _, row = predict_call(snapshot, call)
    return PredictResponse(
        call_id                    = request.call_id,
        arrival                    = request.arrival,
        predicted_turnaround_hours = hours,
        etd                        = request.arrival + timedelta(hours=hours),
        model_version              = snapshot.version,
        features                   = row,
    )


def _current_or_503() -> ModelSnapshot:
    snap = store.current()
    if snap is None:
        raise HTTPException(status_code=503, detail='No model loaded')
    return snap


@app.post('/predict')
async def predict(body: PredictRequest, db_session: Session = Depends(get_db)):
    snap = _current_or_503()
    try:
        response = await run_in_threadpool(handle_predict, body, snap)
    except ValidationError as exc:
        return JSONResponse(status_code=400,
                            content={'error': 'Invalid request', 'fields': _field_errors(exc.errors())})
    except TurnaroundError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    except Exception as exc:
        logger.error('Unhandled error in /predict: %s', exc, exc_info=True)
        raise HTTPException(status_code=500, detail='An unexpected error occurred.')

    if PREDICTION_LOG_ENABLED and body.call_id:
        try:
            await run_in_threadpool(
                log_prediction, db_session,
                call_id             = body.call_id,
                vessel_id           = body.vessel_id,
                arrival             = response.arrival,
                predicted_hours     = response.predicted_turnaround_hours,
                etd                 = response.etd,
                port_estimate_hours = body.port_estimate_hours,
                model_version       = response.model_version,
            )
        except Exception as exc:
            db_session.rollback()
            logger.warning('Prediction for %s not logged: %s', body.call_id, exc)
    return response


# ---------------------------------------------------------------------------
# Health / model administration
# ---------------------------------------------------------------------------

@app.get('/health')
async def health():
    snap = store.current()
    return {'status': 'ok', 'model_loaded': snap is not None,
            'model_version': snap.version if snap else None}


@app.get('/model/info')
async def model_info():
    snap = store.current()
    if snap is None:
        return JSONResponse(status_code=503,
                            content={'error': 'No model loaded', 'last_error': store.last_error})
    return {**snap.info(), 'last_error': store.last_error}


@app.post('/model/reload')
async def model_reload(body: ReloadRequest | None = None):
    body = body or ReloadRequest()
    current = store.current()
    model_path = body.model_path or (current.model_path if current else MODEL_PATH)
    if not model_path:
        raise HTTPException(status_code=400, detail='No model_path given and none configured')
    calendar_path = body.calendar_path if body.calendar_path is not None else (
        current.calendar_path if current else CALENDAR_PATH)
    try:
        snap = await run_in_threadpool(store.load, model_path, calendar_path)
    except (TurnaroundError, OSError, ValueError) as exc:
        raise HTTPException(status_code=422,
                            detail=f'Reload failed, keeping {current.version if current else "no model"}: {exc}')
    return {'status': 'reloaded', 'version': snap.version,
            'previous_version': current.version if current else None}
