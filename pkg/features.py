"""
features.py — Port calls + external calendars/series → FeatureMatrix.

The base feature row (cargo/berth per side, local weekday, 4-hour arrival bin,
holiday flags at −3..+3 days) is built by base_features(), which the training
pipeline and the prediction service both call.  Tidal, weather and congestion
columns are optional ablation groups switched by FeatureToggles.

Missing ablation values are None in the row; the tree learner routes them
natively and the linear baseline imputes the column mean.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone, tzinfo
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from errors import FeatureError, SeriesError
from portcalls import Dataset, PortCall, turnaround_hours
from schemas import FeatureToggles

logger = logging.getLogger(__name__)

DEFAULT_PORT_TZ = 'Europe/Paris'
NONE_LABEL      = 'NONE'
TARGET_NAME     = 'turnaround_hours'
DAY_LABELS      = ('Mon', 'Tue', 'Wed', 'Thu', 'Fri', 'Sat', 'Sun')
HOUR_BINS       = (0, 4, 8, 12, 16, 20)
WEATHER_WINDOW_H = 48

NUMERIC     = 'numeric'
CATEGORICAL = 'categorical'
BOOLEAN     = 'boolean'


# ── Schema ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Column:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL, BOOLEAN):
            raise ValueError(f'unknown column kind {self.kind!r}')


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]
    target:  str = TARGET_NAME

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError('feature names must be unique')
        if self.target in names:
            raise ValueError(f'target {self.target!r} cannot be a feature column')

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def kind(self, name: str) -> str:
        return self.columns[self.index(name)].kind

    def to_dict(self) -> dict:
        return {'target': self.target,
                'columns': [{'name': c.name, 'kind': c.kind} for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> 'FeatureSchema':
        return cls(columns=tuple(Column(c['name'], c['kind']) for c in d['columns']),
                   target=d.get('target', TARGET_NAME))


BASE_COLUMNS = (
    Column('cargo_type_u',         CATEGORICAL),
    Column('fiscal_cargo_type_u',  CATEGORICAL),
    Column('tonnage_u',            NUMERIC),
    Column('berth_u',              CATEGORICAL),
    Column('cargo_type_l',         CATEGORICAL),
    Column('fiscal_cargo_type_l',  CATEGORICAL),
    Column('tonnage_l',            NUMERIC),
    Column('berth_l',              CATEGORICAL),
    Column('day_of_entry',         CATEGORICAL),
    Column('hour_of_entry_round4', CATEGORICAL),
    Column('holiday_m3',           BOOLEAN),
    Column('holiday_m2',           BOOLEAN),
    Column('holiday_m1',           BOOLEAN),
    Column('holiday_on_entry',     BOOLEAN),
    Column('holiday_p1',           BOOLEAN),
    Column('holiday_p2',           BOOLEAN),
    Column('holiday_p3',           BOOLEAN),
)
HOLIDAY_OFFSETS = dict(zip(
    ('holiday_m3', 'holiday_m2', 'holiday_m1', 'holiday_on_entry',
     'holiday_p1', 'holiday_p2', 'holiday_p3'),
    range(-3, 4),
))

TIDAL_COLUMNS = (
    Column('water_height_at_arrival',     NUMERIC),
    Column('hours_since_last_high_water', NUMERIC),
    Column('hours_since_last_low_water',  NUMERIC),
)
WEATHER_COLUMNS = (
    Column('temperature_at_arrival',   NUMERIC),
    Column('wind_at_arrival',          NUMERIC),
    Column('precipitation_at_arrival', NUMERIC),
    Column('precip_sum_48h',           NUMERIC),
    Column('wind_mean_48h',            NUMERIC),
    Column('temperature_mean_48h',     NUMERIC),
)
CONGESTION_COLUMNS = (
    Column('vessels_in_port',       NUMERIC),
    Column('same_cargo_in_port',    NUMERIC),
    Column('avg_turnaround_last_n', NUMERIC),
)


def build_schema(toggles: FeatureToggles | None = None) -> FeatureSchema:
    toggles = toggles or FeatureToggles()
    columns = list(BASE_COLUMNS)
    if toggles.tidal:
        columns += TIDAL_COLUMNS
    if toggles.weather:
        columns += WEATHER_COLUMNS
    if toggles.congestion:
        columns += CONGESTION_COLUMNS
    return FeatureSchema(columns=tuple(columns))


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Row-major feature values aligned with target, call ids and arrival years."""
    schema:   FeatureSchema
    rows:     tuple[tuple, ...]
    target:   np.ndarray
    call_ids: tuple[str, ...]
    years:    np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        years  = np.asarray(self.years, dtype=int)
        object.__setattr__(self, 'target', target)
        object.__setattr__(self, 'years', years)
        n = len(self.rows)
        if len(target) != n or len(self.call_ids) != n or len(years) != n:
            raise ValueError('rows, target, call_ids and years must have equal length')
        if np.isnan(target).any():
            raise ValueError('target contains NaN')
        width = len(self.schema)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f'row {i} has {len(row)} values, schema has {width}')

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        j = self.schema.index(name)
        return [row[j] for row in self.rows]

    def row_dict(self, i: int) -> dict:
        return dict(zip(self.schema.names, self.rows[i]))

    def subset(self, indices) -> 'FeatureMatrix':
        idx = [int(i) for i in indices]
        return FeatureMatrix(
            schema   = self.schema,
            rows     = tuple(self.rows[i] for i in idx),
            target   = self.target[idx] if idx else np.zeros(0),
            call_ids = tuple(self.call_ids[i] for i in idx),
            years    = self.years[idx] if idx else np.zeros(0, dtype=int),
        )

    def with_target(self, target) -> 'FeatureMatrix':
        return FeatureMatrix(self.schema, self.rows, np.asarray(target, dtype=float),
                             self.call_ids, self.years)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(list(self.rows), columns=self.schema.names)
        frame.insert(0, 'call_id', list(self.call_ids))
        frame.insert(1, 'year', self.years)
        frame[self.schema.target] = self.target
        return frame

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)
        logger.info('Wrote feature matrix (%d rows x %d columns) to %s',
                    self.n_rows, len(self.schema), path)


# ---------------------------------------------------------------------------
# External calendars and series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolidayCalendar:
    """Set of local holiday dates."""
    dates: frozenset = frozenset()

    def __contains__(self, day: date) -> bool:
        return day in self.dates

    def __len__(self) -> int:
        return len(self.dates)

    @classmethod
    def from_file(cls, path) -> 'HolidayCalendar':
        """One ISO date per line; blank lines and '#' comments are skipped."""
        dates = set()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            try:
                dates.add(date.fromisoformat(line))
            except ValueError:
                raise SeriesError(f'{path}: line {lineno}: bad date {line!r}') from None
        logger.info('Loaded %d holidays from %s', len(dates), path)
        return cls(frozenset(dates))

    @classmethod
    def for_country(cls, country: str = 'FR', years=None) -> 'HolidayCalendar':
        """Public holidays of `country` from the holidays package."""
        import holidays

        table = holidays.country_holidays(country, years=list(years or []))
        return cls(frozenset(table.keys()))

    def to_file(self, path) -> None:
        Path(path).write_text(''.join(f'{d.isoformat()}\n' for d in sorted(self.dates)))


def _utc_index(values, path=None) -> pd.DatetimeIndex:
    try:
        return pd.DatetimeIndex(pd.to_datetime(values, utc=True, format='ISO8601'))
    except (ValueError, TypeError) as exc:
        raise SeriesError(f'{path or "series"}: bad timestamp ({exc})') from None


def _epoch_seconds(index: pd.DatetimeIndex) -> np.ndarray:
    return (index - pd.Timestamp(0, tz='UTC')).total_seconds().to_numpy()


def _ts_seconds(ts: datetime) -> float:
    return ts.astimezone(timezone.utc).timestamp()


class TideSeries:
    """Water heights per sensor, each sensor strictly increasing in time."""

    def __init__(self, frame: pd.DataFrame, source: str | None = None):
        self._sensors: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        frame = frame.copy()
        frame['timestamp'] = _utc_index(frame['timestamp'], source)
        for sensor, group in frame.groupby('sensor_id', sort=True):
            times = _epoch_seconds(pd.DatetimeIndex(group['timestamp']))
            if np.any(np.diff(times) <= 0):
                raise SeriesError(f'tide sensor {sensor!r}: timestamps not strictly increasing')
            heights = group['water_height_m'].to_numpy(dtype=float)
            self._sensors[str(sensor)] = (times, heights)

    @classmethod
    def from_csv(cls, path) -> 'TideSeries':
        frame = pd.read_csv(path, dtype={'sensor_id': str})
        missing = {'timestamp', 'sensor_id', 'water_height_m'} - set(frame.columns)
        if missing:
            raise SeriesError(f'{path}: missing columns {sorted(missing)}')
        return cls(frame, source=str(path))

    @property
    def sensors(self) -> list[str]:
        return list(self._sensors)

    def samples(self, sensor: str) -> tuple[np.ndarray, np.ndarray]:
        if sensor not in self._sensors:
            raise SeriesError(f'unknown tide sensor {sensor!r} (have {", ".join(self.sensors)})')
        return self._sensors[sensor]


class WeatherSeries:
    """Hourly weather observations; NaN cells are missing observations."""

    COLUMNS = ('temperature_c', 'wind_speed_ms', 'precipitation_mm')

    def __init__(self, frame: pd.DataFrame, source: str | None = None):
        index = _utc_index(frame['hour'], source).floor('h')
        if not index.is_monotonic_increasing or index.has_duplicates:
            raise SeriesError(f'{source or "weather"}: hours not strictly increasing')
        data = frame[list(self.COLUMNS)].astype(float).set_axis(index)
        if (data['precipitation_mm'] < 0).any():
            raise SeriesError(f'{source or "weather"}: negative precipitation')
        self.frame = data

    @classmethod
    def from_csv(cls, path) -> 'WeatherSeries':
        frame = pd.read_csv(path)
        missing = {'hour', *cls.COLUMNS} - set(frame.columns)
        if missing:
            raise SeriesError(f'{path}: missing columns {sorted(missing)}')
        return cls(frame, source=str(path))

    def window(self, start: pd.Timestamp, hours: int) -> pd.DataFrame:
        return self.frame.reindex(pd.date_range(start, periods=hours, freq='h'))


# ---------------------------------------------------------------------------
# Feature groups
# ---------------------------------------------------------------------------

def port_zone(tz) -> tzinfo:
    if tz is None:
        return ZoneInfo(DEFAULT_PORT_TZ)
    return ZoneInfo(tz) if isinstance(tz, str) else tz


def _side(op) -> tuple:
    if op is None:
        return NONE_LABEL, NONE_LABEL, 0.0, NONE_LABEL
    return (
        op.cargo_type or NONE_LABEL,
        op.fiscal_cargo_type or NONE_LABEL,
        float(op.tonnage) if op.tonnage is not None else 0.0,
        op.berth or NONE_LABEL,
    )


def base_features(call: PortCall, calendar: HolidayCalendar | None, tz=None) -> dict:
    """Base feature row of one call, keyed in BASE_COLUMNS order."""
    if call.arrival is None:
        raise FeatureError(call.call_id, 'arrival is missing')
    calendar = calendar or HolidayCalendar()
    local = call.arrival.astimezone(port_zone(tz))
    day   = local.date()

    row = dict(zip(
        ('cargo_type_u', 'fiscal_cargo_type_u', 'tonnage_u', 'berth_u'), _side(call.unload)))
    row.update(zip(
        ('cargo_type_l', 'fiscal_cargo_type_l', 'tonnage_l', 'berth_l'), _side(call.load)))
    row['day_of_entry']         = DAY_LABELS[local.weekday()]
    row['hour_of_entry_round4'] = local.hour // 4 * 4
    for name, offset in HOLIDAY_OFFSETS.items():
        row[name] = int(day + timedelta(days=offset) in calendar)
    return row


def _extrema(heights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of local maxima / minima by sign change of the discrete derivative."""
    if len(heights) < 3:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    prev, mid, nxt = heights[:-2], heights[1:-1], heights[2:]
    highs = np.flatnonzero((mid > prev) & (mid >= nxt)) + 1
    lows  = np.flatnonzero((mid < prev) & (mid <= nxt)) + 1
    return highs, lows


def tidal_features(arrival: datetime, tides: TideSeries, sensor: str) -> dict:
    times, heights = tides.samples(sensor)
    t = _ts_seconds(arrival)
    missing = {c.name: None for c in TIDAL_COLUMNS}
    if len(times) == 0 or t < times[0] or t > times[-1]:
        return missing

    highs, lows = _extrema(heights)

    def _since(idx):
        before = idx[times[idx] <= t]
        return (t - times[before[-1]]) / 3600.0 if len(before) else None

    return {
        'water_height_at_arrival':     float(np.interp(t, times, heights)),
        'hours_since_last_high_water': _since(highs),
        'hours_since_last_low_water':  _since(lows),
    }


def weather_features(arrival: datetime, weather: WeatherSeries) -> dict:
    start  = pd.Timestamp(arrival).tz_convert('UTC').floor('h')
    window = weather.window(start, WEATHER_WINDOW_H)
    first  = window.iloc[0]

    def _value(v):
        return None if pd.isna(v) else float(v)

    def _agg(column, how):
        values = window[column]
        return None if values.isna().any() else float(getattr(values, how)())

    return {
        'temperature_at_arrival':   _value(first['temperature_c']),
        'wind_at_arrival':          _value(first['wind_speed_ms']),
        'precipitation_at_arrival': _value(first['precipitation_mm']),
        'precip_sum_48h':           _agg('precipitation_mm', 'sum'),
        'wind_mean_48h':            _agg('wind_speed_ms', 'mean'),
        'temperature_mean_48h':     _agg('temperature_c', 'mean'),
    }


class CongestionIndex:
    """Vectorized port-occupancy lookups over a dataset's history."""

    def __init__(self, dataset):
        calls = [c for c in dataset if c.arrival is not None]
        self._arrival   = np.array([_ts_seconds(c.arrival) for c in calls], dtype=float)
        self._departure = np.array(
            [_ts_seconds(c.departure) if c.departure else np.inf for c in calls], dtype=float)
        self._hours     = (self._departure - self._arrival) / 3600.0
        self._types     = [set(c.cargo_types()) for c in calls]

    def features(self, call: PortCall, n: int, m_days: int) -> dict:
        t = _ts_seconds(call.arrival)
        prior = self._arrival < t

        in_port = np.flatnonzero(prior & (self._departure > t))
        own = set(call.cargo_types())
        same = sum(1 for j in in_port if own & self._types[j])

        done = np.flatnonzero(prior & (self._departure <= t)
                              & (self._departure >= t - m_days * 86400.0))
        avg = None
        if len(done):
            order = done[np.lexsort((done, self._departure[done]))]
            avg = float(self._hours[order[-n:]].mean())
        return {
            'vessels_in_port':       int(len(in_port)),
            'same_cargo_in_port':    int(same),
            'avg_turnaround_last_n': avg,
        }


def congestion_features(call: PortCall, dataset, n: int, m_days: int) -> dict:
    """Occupancy features at call.arrival; only calls arriving earlier count."""
    return CongestionIndex(dataset).features(call, n, m_days)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _build_rows(calls, schema, calendar, tz, toggles, tides, sensor, weather, congestion):
    rows, targets, years = [], [], []
    zone = port_zone(tz)
    for call in calls:
        try:
            values = base_features(call, calendar, zone)
            if toggles.tidal:
                values.update(tidal_features(call.arrival, tides, sensor))
            if toggles.weather:
                values.update(weather_features(call.arrival, weather))
            if toggles.congestion:
                values.update(congestion.features(
                    call, toggles.congestion_last_n, toggles.congestion_window_days))
            target = turnaround_hours(call)
        except (FeatureError, SeriesError):
            raise
        except Exception as exc:
            raise FeatureError(call.call_id, str(exc)) from exc
        rows.append(tuple(values[name] for name in schema.names))
        targets.append(target)
        years.append(call.arrival.astimezone(zone).year)
    return rows, targets, years


def assemble_matrix(dataset: Dataset, calendar: HolidayCalendar | None = None,
                    tz=None, toggles: FeatureToggles | None = None,
                    tides: TideSeries | None = None, weather: WeatherSeries | None = None,
                    n_jobs: int = 1, chunk_size: int = 500) -> FeatureMatrix:
    """Feature matrix in dataset order.  Toggled-off groups are absent from the schema."""
    toggles = toggles or FeatureToggles()
    schema  = build_schema(toggles)
    calls   = list(dataset)

    sensor = None
    if toggles.tidal:
        if tides is None:
            raise SeriesError('tidal features enabled but no tide series was given')
        sensor = toggles.tide_sensor
        if sensor is None:
            if len(tides.sensors) != 1:
                raise SeriesError('tide_sensor must be set when the series has several sensors')
            sensor = tides.sensors[0]
    if toggles.weather and weather is None:
        raise SeriesError('weather features enabled but no weather series was given')
    congestion = CongestionIndex(calls) if toggles.congestion else None

    args = (schema, calendar, tz, toggles, tides, sensor, weather, congestion)
    if n_jobs == 1 or len(calls) <= chunk_size:
        rows, targets, years = _build_rows(calls, *args)
    else:
        chunks = [calls[i:i + chunk_size] for i in range(0, len(calls), chunk_size)]
        parts = Parallel(n_jobs=n_jobs)(delayed(_build_rows)(chunk, *args) for chunk in chunks)
        rows    = [r for part in parts for r in part[0]]
        targets = [y for part in parts for y in part[1]]
        years   = [y for part in parts for y in part[2]]

    logger.info('Assembled feature matrix: %d rows, %d columns', len(rows), len(schema))
    return FeatureMatrix(
        schema   = schema,
        rows     = tuple(rows),
        target   = np.asarray(targets, dtype=float),
        call_ids = tuple(c.call_id for c in calls),
        years    = np.asarray(years, dtype=int),
    )
