"""
portcalls.py — Port-call domain types, CSV ingestion and turnaround computation.

A port call is one vessel visit with at most one unloading (U) and one loading
(L) operation.  Records come from the tabular subset of the FAL forms that the
port community system exports; this module only speaks that CSV format.

Public API:
    parse_dataset(path, strict=True)   → Dataset  (lenient mode: bad rows in
                                          Dataset.rejected)
    serialize_dataset(dataset, path)   → None     (parse ∘ serialize = identity)
    turnaround_hours(call)             → float hours, no rounding

All timestamps are timezone-aware UTC datetimes.  Local-time concerns belong
to features.py.
"""

import logging
import math
import re
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import DatasetFormatError, DuplicateCallError, OpenCallError, RowError

logger = logging.getLogger(__name__)

# Exact, ordered CSV header.
PORTCALL_COLUMNS = (
    'call_id', 'vessel_id', 'arrival', 'departure',
    'unload_cargo_type', 'unload_fiscal_cargo_type', 'unload_tonnage', 'unload_berth',
    'load_cargo_type', 'load_fiscal_cargo_type', 'load_tonnage', 'load_berth',
)
# Optional trailing columns, written only when some timestamp was filled from AIS.
PROVENANCE_COLUMNS = ('arrival_source', 'departure_source')

_OPERATION_FIELDS = ('cargo_type', 'fiscal_cargo_type', 'tonnage', 'berth')

# Turnaround is reported as a plain float number of hours.
TurnaroundHours = float


# ── Timestamp helpers ─────────────────────────────────────────────────────────

def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp carrying a UTC offset ('Z' or ±hh:mm)."""
    try:
        dt = datetime.fromisoformat(value.strip())
    except ValueError:
        raise ValueError(f'malformed timestamp {value!r}') from None
    if dt.tzinfo is None:
        raise ValueError(f'timestamp {value!r} has no UTC offset')
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Format as ISO-8601 with a 'Z' suffix; microseconds only when non-zero."""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime('%Y-%m-%dT%H:%M:%S.%fZ')
    return dt.strftime('%Y-%m-%dT%H:%M:%SZ')


def _clean_label(v):
    if v is None:
        return None
    s = re.sub(r'\s+', ' ', str(v)).strip()
    return s or None


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class CargoOperation(BaseModel):
    """One unloading or loading operation.  Every field may be absent."""
    model_config = ConfigDict(frozen=True)

    cargo_type:        str | None   = None
    fiscal_cargo_type: str | None   = None
    tonnage:           float | None = Field(default=None, ge=0)
    berth:             str | None   = None

    @field_validator('cargo_type', 'fiscal_cargo_type', 'berth', mode='before')
    @classmethod
    def trim_label(cls, v):
        return _clean_label(v)

    @field_validator('tonnage')
    @classmethod
    def finite_tonnage(cls, v):
        if v is not None and not math.isfinite(v):
            raise ValueError('tonnage must be finite')
        return v


class PortCall(BaseModel):
    model_config = ConfigDict(frozen=True)

    call_id:   str = Field(..., min_length=1)
    vessel_id: str = Field(..., min_length=1)
    arrival:   datetime | None = None
    departure: datetime | None = None
    unload:    CargoOperation | None = None
    load:      CargoOperation | None = None

    # 'ais' when the timestamp was filled by reconciliation, else None.
    arrival_source:   str | None = None
    departure_source: str | None = None

    @field_validator('call_id', 'vessel_id', mode='before')
    @classmethod
    def strip_ids(cls, v):
        return str(v).strip() if v is not None else v

    @field_validator('arrival', 'departure')
    @classmethod
    def to_utc(cls, v: datetime | None) -> datetime | None:
        if v is None:
            return None
        if v.tzinfo is None:
            raise ValueError('timestamps must be timezone-aware')
        return v.astimezone(timezone.utc)

    @model_validator(mode='after')
    def departure_after_arrival(self) -> 'PortCall':
        if self.arrival is not None and self.departure is not None \
                and self.departure <= self.arrival:
            raise ValueError('departure must be after arrival')
        return self

    # ── Convenience ──────────────────────────────────────────────────────────

    @property
    def is_open(self) -> bool:
        return self.arrival is None or self.departure is None

    def operations(self) -> list[tuple[str, CargoOperation]]:
        """Present operations as ('U'|'L', op) pairs, unload first."""
        return [(side, op) for side, op in (('U', self.unload), ('L', self.load))
                if op is not None]

    def cargo_types(self) -> list[str]:
        """Distinct cargo types of the present operations, unload first."""
        seen = []
        for _, op in self.operations():
            if op.cargo_type and op.cargo_type not in seen:
                seen.append(op.cargo_type)
        return seen

    def total_tonnage(self) -> float:
        return sum(op.tonnage or 0.0 for _, op in self.operations())


class Dataset(BaseModel):
    """Ordered, immutable collection of port calls with provenance."""
    model_config = ConfigDict(frozen=True)

    calls:       tuple[PortCall, ...] = ()
    source:      str | None           = None
    ingested_at: datetime | None      = None
    rejected:    tuple[dict, ...]     = ()   # RowError.to_dict() entries

    @model_validator(mode='after')
    def unique_call_ids(self) -> 'Dataset':
        seen = set()
        for call in self.calls:
            if call.call_id in seen:
                raise DuplicateCallError(f'duplicate call_id {call.call_id!r}')
            seen.add(call.call_id)
        return self

    def __len__(self) -> int:
        return len(self.calls)

    def __iter__(self):
        return iter(self.calls)

    def __getitem__(self, i):
        return self.calls[i]

    def with_calls(self, calls) -> 'Dataset':
        """Same provenance, different calls."""
        return Dataset(calls=tuple(calls), source=self.source,
                       ingested_at=self.ingested_at, rejected=self.rejected)

    def by_id(self) -> dict[str, PortCall]:
        return {c.call_id: c for c in self.calls}


# ---------------------------------------------------------------------------
# Turnaround
# ---------------------------------------------------------------------------

def turnaround_hours(call: PortCall) -> TurnaroundHours:
    """Hours between arrival and departure, fractional, no rounding."""
    if call.arrival is None or call.departure is None:
        raise OpenCallError(f'call {call.call_id} is open (missing '
                            f'{"arrival" if call.arrival is None else "departure"})')
    return (call.departure - call.arrival).total_seconds() / 3600.0


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _row_to_call(row: dict, line: int) -> PortCall:
    """Build one PortCall from a row of raw strings.  Raises RowError."""
    call_id = row['call_id'].strip() or None

    def _ts(column):
        raw = row[column].strip()
        if not raw:
            return None
        try:
            return parse_timestamp(raw)
        except ValueError as exc:
            raise RowError(line, str(exc), column=column, call_id=call_id) from None

    def _operation(prefix):
        cells = {f: row[f'{prefix}_{f}'].strip() for f in _OPERATION_FIELDS}
        if not any(cells.values()):
            return None
        tonnage = None
        if cells['tonnage']:
            try:
                tonnage = float(cells['tonnage'])
            except ValueError:
                raise RowError(line, f'tonnage {cells["tonnage"]!r} is not a number',
                               column=f'{prefix}_tonnage', call_id=call_id) from None
        try:
            return CargoOperation(
                cargo_type        = cells['cargo_type'],
                fiscal_cargo_type = cells['fiscal_cargo_type'],
                tonnage           = tonnage,
                berth             = cells['berth'],
            )
        except ValidationError as exc:
            err = exc.errors()[0]
            raise RowError(line, err['msg'], column=f'{prefix}_{err["loc"][0]}',
                           call_id=call_id) from None

    arrival   = _ts('arrival')
    departure = _ts('departure')
    unload    = _operation('unload')
    load      = _operation('load')
    try:
        return PortCall(
            call_id          = row['call_id'],
            vessel_id        = row['vessel_id'],
            arrival          = arrival,
            departure        = departure,
            unload           = unload,
            load             = load,
            arrival_source   = row.get('arrival_source') or None,
            departure_source = row.get('departure_source') or None,
        )
    except ValidationError as exc:
        err = exc.errors()[0]
        column = str(err['loc'][0]) if err['loc'] else None
        raise RowError(line, err['msg'], column=column, call_id=call_id) from None


def _check_header(columns: list[str], path) -> None:
    expected = list(PORTCALL_COLUMNS)
    if columns[:len(expected)] != expected:
        raise DatasetFormatError(
            f'{path}: header must be {",".join(expected)} (got {",".join(columns)})'
        )
    extra = columns[len(expected):]
    if extra and extra != list(PROVENANCE_COLUMNS):
        raise DatasetFormatError(f'{path}: unexpected extra columns {extra}')


def parse_dataset(path, strict: bool = True, format: str = 'csv') -> Dataset:
    """Read a port-call CSV into a Dataset.

    strict=True  → the first bad row raises RowError (with its line number).
    strict=False → bad rows are skipped, logged, and listed in Dataset.rejected.
    """
    if format != 'csv':
        raise DatasetFormatError(f'unsupported format {format!r}; only csv is read')
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f'{path}: file not found')
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f'{path}: {exc}') from None
    _check_header(list(frame.columns), path)

    calls:    list[PortCall] = []
    rejected: list[RowError] = []
    seen_ids: set[str] = set()

    for offset, row in enumerate(frame.to_dict(orient='records')):
        line = offset + 2   # header is line 1
        try:
            call = _row_to_call(row, line)
            if call.call_id in seen_ids:
                raise RowError(line, f'duplicate call_id {call.call_id!r}',
                               column='call_id', call_id=call.call_id)
        except RowError as err:
            if strict:
                raise
            logger.warning('%s: skipping %s', path.name, err)
            rejected.append(err)
            continue
        seen_ids.add(call.call_id)
        calls.append(call)

    logger.info('Ingested %d port calls from %s (%d rejected)',
                len(calls), path.name, len(rejected))
    return Dataset(
        calls       = tuple(calls),
        source      = str(path),
        ingested_at = datetime.now(timezone.utc),
        rejected    = tuple(e.to_dict() for e in rejected),
    )


def _operation_cells(op: CargoOperation | None) -> list[str]:
    if op is None:
        return ['', '', '', '']
    return [
        op.cargo_type or '',
        op.fiscal_cargo_type or '',
        repr(op.tonnage) if op.tonnage is not None else '',
        op.berth or '',
    ]


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    """All-string frame in CSV column order (provenance columns when needed)."""
    with_provenance = any(c.arrival_source or c.departure_source for c in dataset)
    columns = list(PORTCALL_COLUMNS) + (list(PROVENANCE_COLUMNS) if with_provenance else [])
    rows = []
    for c in dataset:
        row = [
            c.call_id,
            c.vessel_id,
            format_timestamp(c.arrival) if c.arrival else '',
            format_timestamp(c.departure) if c.departure else '',
            *_operation_cells(c.unload),
            *_operation_cells(c.load),
        ]
        if with_provenance:
            row += [c.arrival_source or '', c.departure_source or '']
        rows.append(row)
    return pd.DataFrame(rows, columns=columns, dtype=str)


def serialize_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset in the exact port-call CSV format."""
    dataset_frame(dataset).to_csv(path, index=False)
    logger.info('Wrote %d port calls to %s', len(dataset), path)
