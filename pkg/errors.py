"""
errors.py — Exception hierarchy for the turnaround prediction pipeline.

Every domain failure derives from TurnaroundError so the CLI and the HTTP
layer can catch one type.  Caller mistakes about plain values (length
mismatch, empty input) also derive from ValueError.
"""


class TurnaroundError(Exception):
    """Base class for all pipeline errors."""


# ── Ingestion ─────────────────────────────────────────────────────────────────

class DatasetFormatError(TurnaroundError):
    """The file itself is unusable: missing, wrong header, unreadable."""


class RowError(TurnaroundError):
    """One bad data row.  Collected in lenient mode, raised in strict mode."""

    def __init__(self, line: int, message: str, column: str | None = None,
                 call_id: str | None = None):
        self.line    = line
        self.column  = column
        self.call_id = call_id
        self.message = message
        where = f'line {line}' + (f', column {column!r}' if column else '')
        super().__init__(f'{where}: {message}')

    def to_dict(self) -> dict:
        return {
            'line':    self.line,
            'column':  self.column,
            'call_id': self.call_id,
            'message': self.message,
        }


class OpenCallError(TurnaroundError):
    """Turnaround requested for a call without a departure (or arrival)."""


class DuplicateCallError(TurnaroundError):
    # Not a ValueError: raised from a pydantic validator and must propagate as-is.
    pass


# ── Cleaning / features ───────────────────────────────────────────────────────

class DatasetExhaustedError(TurnaroundError):
    """Every call was removed by the cleaning rules."""


class EmptyDatasetError(TurnaroundError, ValueError):
    pass


class FeatureError(TurnaroundError):
    def __init__(self, call_id: str | None, message: str):
        self.call_id = call_id
        super().__init__(f'call {call_id}: {message}' if call_id else message)


class SeriesError(TurnaroundError, ValueError):
    """A tide or weather series violates its ordering / range invariants."""


# ── Models ────────────────────────────────────────────────────────────────────

class SchemaMismatchError(TurnaroundError):
    def __init__(self, column: str, message: str):
        self.column = column
        super().__init__(f'{message} (column {column!r})')


class ModelFileError(TurnaroundError):
    """Unreadable or structurally invalid model file."""


class ModelVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class DesignMatrixError(TurnaroundError, ValueError):
    """Nothing left to fit after dropping constant columns."""


# ── Evaluation ────────────────────────────────────────────────────────────────

class EvaluationError(TurnaroundError, ValueError):
    pass


# ── AIS ───────────────────────────────────────────────────────────────────────

class TrackError(TurnaroundError, ValueError):
    """Unsorted track, mixed vessels, or an invalid geofence."""
