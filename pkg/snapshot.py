"""
snapshot.py — Immutable model snapshots and the hot-swappable store behind the service.

A ModelSnapshot bundles the GBDT model, the holiday calendar and the port
time zone.  It is never mutated; SnapshotStore.load() builds a complete new
snapshot first and only then swaps the reference, so a request holding the
old snapshot finishes on it and no request ever sees a half-loaded model.

Cross-worker reloads
--------------------
With Redis available, every successful load bumps a generation counter in the
hash `turnaround:model` (together with the model/calendar paths).  Each
worker compares that generation on access and reloads when it is behind.
Without Redis, reloads are per-process.
"""

import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from errors import SchemaMismatchError
from features import BASE_COLUMNS, DEFAULT_PORT_TZ, HolidayCalendar, base_features
from gbdt import GbdtModel, feature_importance, predict
from modelfile import GBDT_FORMAT, read_model_file
from redis_client import get_redis

logger = logging.getLogger(__name__)

REDIS_KEY = 'turnaround:model'

_SERVING_COLUMNS = {c.name for c in BASE_COLUMNS}


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    model:         GbdtModel
    calendar:      HolidayCalendar
    tz:            str
    model_path:    str
    calendar_path: str | None
    created_at:    str | None            # training time from the model file header
    loaded_at:     datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @property
    def version(self) -> str:
        return self.model.version

    def info(self) -> dict:
        return {
            'version':       self.version,
            'schema':        self.model.schema.to_dict(),
            'n_trees':       len(self.model.trees),
            'created_at':    self.created_at,
            'loaded_at':     self.loaded_at.isoformat(),
            'model_path':    self.model_path,
            'calendar_path': self.calendar_path,
            'timezone':      self.tz,
            'importance':    feature_importance(self.model),
        }


def load_snapshot(model_path, calendar_path=None, tz: str = DEFAULT_PORT_TZ) -> ModelSnapshot:
    """Read a model (and optional holiday calendar) into a new snapshot.

    The model may only use base columns: tidal, weather and congestion inputs
    are not part of a prediction request.
    """
    payload, header = read_model_file(model_path, GBDT_FORMAT)
    model = GbdtModel.from_payload(payload)
    extra = [name for name in model.schema.names if name not in _SERVING_COLUMNS]
    if extra:
        raise SchemaMismatchError(extra[0], 'column is not available at prediction time')
    logger.info('Read model %s from %s (%d trees)', model.version, model_path, len(model.trees))
    calendar = HolidayCalendar.from_file(calendar_path) if calendar_path else HolidayCalendar()
    return ModelSnapshot(
        model         = model,
        calendar      = calendar,
        tz            = tz,
        model_path    = str(model_path),
        calendar_path = str(calendar_path) if calendar_path else None,
        created_at    = header.get('created_at'),
    )


class SnapshotStore:
    """Holds the current snapshot; loads are serialised, reads are lock-free."""

    def __init__(self, tz: str = DEFAULT_PORT_TZ, use_redis: bool = True):
        self.tz          = tz
        self.use_redis   = use_redis
        self.last_error: str | None = None
        self._current: ModelSnapshot | None = None
        self._generation = 0
        self._lock = threading.Lock()

    @property
    def loaded(self) -> bool:
        return self._current is not None

    def current(self) -> ModelSnapshot | None:
        self._sync()
        return self._current

    def load(self, model_path, calendar_path=None, publish: bool = True) -> ModelSnapshot:
        """Load and swap in a new snapshot; on failure the old one stays current."""
        with self._lock:
            try:
                snap = load_snapshot(model_path, calendar_path, self.tz)
            except Exception as exc:
                self.last_error = f'{Path(str(model_path)).name}: {exc}'
                logger.error('Snapshot load from %s failed; keeping %s', model_path,
                             self._current.version if self._current else 'no model',
                             exc_info=True)
                raise
            old = self._current
            self._current = snap
            self.last_error = None
        logger.info('Snapshot swapped: %s -> %s (%s)',
                    old.version if old else None, snap.version, model_path)
        if publish:
            self._publish(snap)
        return snap

    # ── Redis generation sync ─────────────────────────────────────────────────

    def _redis(self):
        return get_redis() if self.use_redis else None

    def _publish(self, snap: ModelSnapshot) -> None:
        r = self._redis()
        if r is None:
            return
        try:
            pipe = r.pipeline()
            pipe.hset(REDIS_KEY, mapping={'model_path': snap.model_path,
                                          'calendar_path': snap.calendar_path or ''})
            pipe.hincrby(REDIS_KEY, 'generation', 1)
            _, generation = pipe.execute()
            self._generation = int(generation)
        except Exception as exc:
            logger.warning('Could not publish model generation to Redis: %s', exc)

    def _sync(self) -> None:
        r = self._redis()
        if r is None:
            return
        try:
            state = r.hgetall(REDIS_KEY)
        except Exception as exc:
            logger.warning('Redis generation check failed: %s', exc)
            return
        generation = int(state.get('generation') or 0)
        if generation <= self._generation:
            return
        self._generation = generation
        logger.info('Model generation %d published by another worker; reloading', generation)
        try:
            self.load(state['model_path'], state.get('calendar_path') or None, publish=False)
        except Exception:
            pass   # recorded in last_error, old snapshot kept


# ── Prediction ────────────────────────────────────────────────────────────────

def predict_call(snap: ModelSnapshot, call) -> tuple[float, datetime, dict]:
    """(predicted hours, ETD, base feature row) for one call under a snapshot.

    The feature row comes from features.base_features(), the same function the
    training pipeline uses.
    """
    row   = base_features(call, snap.calendar, snap.tz)
    hours = predict(snap.model, row)
    return hours, call.arrival + timedelta(hours=hours), row
