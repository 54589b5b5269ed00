"""
ais.py — Port entry/exit times from AIS position streams.

A geofence polygon defines "in port".  detect_visits() turns one vessel's
time-sorted track into PortVisits; reconcile() fills missing arrival or
departure timestamps of port calls from uniquely matching visits.

Visit rules:
  - point-in-polygon by even-odd ray casting, points on the boundary are inside
  - a visit opens at the first inside fix after an outside fix (or track start)
    and closes at the last inside fix before an outside fix
  - a gap > max_gap_min between inside fixes closes the visit at the last fix
    before the gap; the next inside fix opens a new one
  - visits separated by < min_dwell_min outside are merged (never across a gap)
  - after merging, closed visits shorter than min_dwell_min are discarded
  - a track ending inside leaves the last visit open (exit = None)
"""

import json
import logging
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import TrackError
from portcalls import Dataset, format_timestamp, parse_timestamp
from schemas import VisitParams

logger = logging.getLogger(__name__)

AIS_COLUMNS    = ('mmsi', 'timestamp', 'lat', 'lon', 'sog_knots')
VISIT_COLUMNS  = ('vessel_id', 'entry', 'exit', 'n_fixes')
AIS_PROVENANCE = 'ais'


# ── Types ─────────────────────────────────────────────────────────────────────

class PositionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    vessel_id: str
    timestamp: datetime
    lat:       float = Field(..., ge=-90, le=90)
    lon:       float = Field(..., ge=-180, le=180)
    sog:       float = Field(default=0.0, ge=0)

    @field_validator('timestamp')
    @classmethod
    def utc(cls, v: datetime) -> datetime:
        if v.tzinfo is None:
            raise ValueError('timestamp must be timezone-aware')
        return v.astimezone(timezone.utc)


def _orientation(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of segments p1p2 and q1q2."""
    d1 = _orientation(*q1, *q2, *p1)
    d2 = _orientation(*q1, *q2, *p2)
    d3 = _orientation(*p1, *p2, *q1)
    d4 = _orientation(*p1, *p2, *q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_segment(a, b, c, d):
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) \
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (on_segment(q1, q2, p1, d1) or on_segment(q1, q2, p2, d2)
            or on_segment(p1, p2, q1, d3) or on_segment(p1, p2, q2, d4))


class Geofence(BaseModel):
    """Simple polygon of (lon, lat) vertices, implicitly closed."""
    model_config = ConfigDict(frozen=True)

    name:    str = 'port'
    polygon: tuple[tuple[float, float], ...]

    @field_validator('polygon', mode='before')
    @classmethod
    def drop_closing_vertex(cls, v):
        pts = [tuple(float(c) for c in p) for p in v]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        return tuple(pts)

    @model_validator(mode='after')
    def simple_polygon(self) -> 'Geofence':
        pts = self.polygon
        n = len(pts)
        if n < 3:
            raise ValueError('a geofence needs at least 3 vertices')
        for p in pts:
            if len(p) != 2 or not (-180 <= p[0] <= 180 and -90 <= p[1] <= 90):
                raise ValueError(f'vertex {p} is not a valid (lon, lat) pair')
        edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(*edges[i], *edges[j]):
                    raise ValueError(f'geofence {self.name!r} is self-intersecting '
                                     f'(edges {i} and {j})')
        return self

    def contains(self, lon, lat) -> np.ndarray:
        """Vectorized even-odd test; boundary points count as inside."""
        px = np.atleast_1d(np.asarray(lon, dtype=float))[:, None]
        py = np.atleast_1d(np.asarray(lat, dtype=float))[:, None]
        verts = np.asarray(self.polygon, dtype=float)
        xi, yi = verts[:, 0], verts[:, 1]
        xj, yj = np.roll(xi, 1), np.roll(yi, 1)

        straddles = (yi > py) != (yj > py)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
        crossings = straddles & (px < x_cross)
        inside = crossings.sum(axis=1) % 2 == 1

        cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi)
        on_edge = (np.abs(cross) <= 1e-12) \
            & (px >= np.minimum(xi, xj)) & (px <= np.maximum(xi, xj)) \
            & (py >= np.minimum(yi, yj)) & (py <= np.maximum(yi, yj))
        return inside | on_edge.any(axis=1)


class PortVisit(BaseModel):
    vessel_id: str
    entry:     datetime
    exit:      datetime | None = None
    n_fixes:   int = Field(default=0, ge=0)
    closed_by: Literal['exit', 'gap', 'end'] = 'exit'

    @model_validator(mode='after')
    def exit_after_entry(self) -> 'PortVisit':
        if self.exit is not None and self.exit < self.entry:
            raise ValueError('exit must not precede entry')
        return self

    @property
    def dwell(self) -> timedelta | None:
        return None if self.exit is None else self.exit - self.entry


# ---------------------------------------------------------------------------
# Visit detection
# ---------------------------------------------------------------------------

def _detect(vessel_id: str, times: list[datetime], inside: np.ndarray,
            params: VisitParams) -> list[PortVisit]:
    max_gap   = timedelta(minutes=params.max_gap_min)
    min_dwell = timedelta(minutes=params.min_dwell_min)

    raw: list[dict] = []
    current = None
    for t, is_in in zip(times, inside):
        if is_in:
            if current is not None and t - current['last'] > max_gap:
                current['closed_by'] = 'gap'
                raw.append(current)
                current = None
            if current is None:
                current = {'entry': t, 'last': t, 'stamps': set(), 'closed_by': 'exit'}
            current['last'] = t
            current['stamps'].add(t)
        elif current is not None:
            raw.append(current)
            current = None
    if current is not None:
        current['closed_by'] = 'end'
        raw.append(current)

    merged: list[dict] = []
    for v in raw:
        prev = merged[-1] if merged else None
        if prev is not None and prev['closed_by'] == 'exit' and v['entry'] - prev['last'] < min_dwell:
            prev['last'] = v['last']
            prev['stamps'] |= v['stamps']
            prev['closed_by'] = v['closed_by']
        else:
            merged.append(v)

    visits = []
    for v in merged:
        exit_time = None if v['closed_by'] == 'end' else v['last']
        if exit_time is not None and exit_time - v['entry'] < min_dwell:
            continue
        visits.append(PortVisit(vessel_id=vessel_id, entry=v['entry'], exit=exit_time,
                                n_fixes=len(v['stamps']), closed_by=v['closed_by']))
    return visits


def detect_visits(track, fence: Geofence, params: VisitParams | None = None) -> list[PortVisit]:
    """Port visits of one vessel's time-sorted track of PositionReports."""
    params = params or VisitParams()
    track = list(track)
    if not track:
        return []
    vessels = {p.vessel_id for p in track}
    if len(vessels) > 1:
        raise TrackError(f'track mixes {len(vessels)} vessels: {", ".join(sorted(vessels))}')
    times = [p.timestamp for p in track]
    if any(b < a for a, b in zip(times, times[1:])):
        raise TrackError(f'track of vessel {track[0].vessel_id} is not sorted by time')
    inside = fence.contains([p.lon for p in track], [p.lat for p in track])
    return _detect(track[0].vessel_id, times, inside, params)


# ── Tabular AIS input ─────────────────────────────────────────────────────────

def read_track_csv(path) -> pd.DataFrame:
    """AIS CSV (mmsi,timestamp,lat,lon,sog_knots) → validated frame."""
    frame = pd.read_csv(path, dtype={'mmsi': str})
    missing = set(AIS_COLUMNS) - set(frame.columns)
    if missing:
        raise TrackError(f'{path}: missing columns {sorted(missing)}')
    try:
        frame['timestamp'] = pd.to_datetime(frame['timestamp'], utc=True, format='ISO8601')
    except (ValueError, TypeError) as exc:
        raise TrackError(f'{path}: bad timestamp ({exc})') from None
    bad = ~frame['lat'].between(-90, 90) | ~frame['lon'].between(-180, 180) \
        | (frame['sog_knots'] < 0)
    if bad.any():
        first = int(np.flatnonzero(bad.to_numpy())[0])
        raise TrackError(f'{path}: line {first + 2}: position or speed out of range')
    logger.info('Read %d AIS fixes for %d vessels from %s',
                len(frame), frame['mmsi'].nunique(), path)
    return frame


def _vessel_visits(vessel_id: str, group: pd.DataFrame, fence: Geofence,
                   params: VisitParams) -> list[PortVisit]:
    times = [ts.to_pydatetime() for ts in group['timestamp']]
    inside = fence.contains(group['lon'].to_numpy(), group['lat'].to_numpy())
    return _detect(vessel_id, times, inside, params)


def detect_all_visits(frame: pd.DataFrame, fence: Geofence, params: VisitParams | None = None,
                      n_jobs: int = 1) -> list[PortVisit]:
    """Visits of every vessel in an AIS frame, ordered by vessel then entry."""
    params = params or VisitParams()
    frame = frame.sort_values(['mmsi', 'timestamp'], kind='stable')
    groups = [(str(mmsi), g) for mmsi, g in frame.groupby('mmsi', sort=True)]
    per_vessel = Parallel(n_jobs=n_jobs)(
        delayed(_vessel_visits)(mmsi, g, fence, params) for mmsi, g in groups
    )
    visits = [v for vs in per_vessel for v in vs]
    logger.info('Detected %d port visits for %d vessels', len(visits), len(groups))
    return visits


def load_geofence(path) -> Geofence:
    try:
        return Geofence.model_validate(json.loads(Path(path).read_text()))
    except ValidationError as exc:
        raise TrackError(f'{path}: invalid geofence: {exc.errors()[0]["msg"]}') from None


def write_visits_csv(visits, path) -> None:
    frame = pd.DataFrame(
        [(v.vessel_id, format_timestamp(v.entry),
          format_timestamp(v.exit) if v.exit else '', v.n_fixes) for v in visits],
        columns=list(VISIT_COLUMNS),
    )
    frame.to_csv(path, index=False)
    logger.info('Wrote %d visits to %s', len(visits), path)


def read_visits_csv(path) -> list[PortVisit]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        PortVisit(
            vessel_id = row['vessel_id'],
            entry     = parse_timestamp(row['entry']),
            exit      = parse_timestamp(row['exit']) if row['exit'] else None,
            n_fixes   = int(row['n_fixes'] or 0),
            closed_by = 'exit' if row['exit'] else 'end',
        )
        for row in frame.to_dict(orient='records')
    ]


# ---------------------------------------------------------------------------
# Reconciliation
# ---------------------------------------------------------------------------

class ReconcileEntry(BaseModel):
    call_id:    str
    status:     Literal['filled', 'ambiguous', 'unmatched']
    fields:     list[str] = Field(default_factory=list)
    candidates: int = 0
    detail:     str | None = None


class ReconciliationReport(BaseModel):
    tolerance_hours: float
    entries:         list[ReconcileEntry] = Field(default_factory=list)

    def _with(self, status: str) -> list[ReconcileEntry]:
        return [e for e in self.entries if e.status == status]

    @property
    def filled(self) -> list[ReconcileEntry]:
        return self._with('filled')

    @property
    def ambiguous(self) -> list[ReconcileEntry]:
        return self._with('ambiguous')

    @property
    def unmatched(self) -> list[ReconcileEntry]:
        return self._with('unmatched')


def reconcile(calls: Dataset, visits, tolerance_h: float = 12.0,
              id_map: dict[str, str] | None = None) -> tuple[Dataset, ReconciliationReport]:
    """Fill missing arrival/departure timestamps from uniquely matching visits.

    The match window is [arrival − tol, departure + tol]; a missing side
    collapses onto the declared one.  Existing timestamps are never changed.
    `id_map` translates port-call vessel ids (IMO) into AIS ids (MMSI).
    """
    id_map = id_map or {}
    tol = timedelta(hours=tolerance_h)
    by_vessel: dict[str, list[PortVisit]] = {}
    for v in visits:
        by_vessel.setdefault(v.vessel_id, []).append(v)

    report = ReconciliationReport(tolerance_hours=tolerance_h)
    out = []
    for call in calls:
        if not call.is_open:
            out.append(call)
            continue
        declared = [t for t in (call.arrival, call.departure) if t is not None]
        if not declared:
            report.entries.append(ReconcileEntry(call_id=call.call_id, status='unmatched',
                                                 detail='no declared timestamp'))
            out.append(call)
            continue
        start, end = min(declared) - tol, max(declared) + tol
        vessel = id_map.get(call.vessel_id, call.vessel_id)
        candidates = [
            v for v in by_vessel.get(vessel, [])
            if v.entry <= end and (v.exit is None or v.exit >= start)
        ]
        if len(candidates) != 1:
            status = 'ambiguous' if candidates else 'unmatched'
            if candidates:
                logger.warning('Call %s: %d candidate AIS visits, left untouched',
                               call.call_id, len(candidates))
            report.entries.append(ReconcileEntry(
                call_id=call.call_id, status=status, candidates=len(candidates),
                detail=None if candidates else 'no visit overlaps the window'))
            out.append(call)
            continue

        visit = candidates[0]
        update, fields = {}, []
        if call.arrival is None:
            update.update(arrival=visit.entry, arrival_source=AIS_PROVENANCE)
            fields.append('arrival')
        if call.departure is None and visit.exit is not None:
            update.update(departure=visit.exit, departure_source=AIS_PROVENANCE)
            fields.append('departure')
        arrival   = update.get('arrival', call.arrival)
        departure = update.get('departure', call.departure)
        if not fields or (arrival and departure and departure <= arrival):
            report.entries.append(ReconcileEntry(
                call_id=call.call_id, status='unmatched', candidates=1,
                detail='visit still open' if not fields else 'visit inconsistent with declared time'))
            out.append(call)
            continue
        out.append(call.model_copy(update=update))
        report.entries.append(ReconcileEntry(call_id=call.call_id, status='filled',
                                             fields=fields, candidates=1))

    logger.info('Reconciled %d open calls: %d filled, %d ambiguous, %d unmatched',
                len(report.entries), len(report.filled), len(report.ambiguous),
                len(report.unmatched))
    return calls.with_calls(out), report
