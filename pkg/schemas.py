"""
schemas.py — Pydantic v2 models for every JSON config file and HTTP body.

Config files (rules.json, train.json, toggles.json, synth.json, grid.json,
fence params) and the /predict request/response are validated here, so the
rest of the code can trust their ranges.

Validation errors in HTTP bodies are mapped to HTTP 400 with field-level
messages by the exception handler in app.py.
"""

import json
import re
from datetime import datetime
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from portcalls import CargoOperation


# ── Shared validator helpers ──────────────────────────────────────────────────

def _collapse(v: str | None) -> str | None:
    """Collapse all whitespace to a single space, strip ends.  Empty → None."""
    if v is None:
        return None
    s = re.sub(r'\s+', ' ', str(v)).strip()
    return s or None


def load_config(model: type[BaseModel], path) -> BaseModel:
    """Parse a JSON config file into `model`; a missing path yields defaults."""
    if path is None:
        return model()
    return model.model_validate(json.loads(Path(path).read_text()))


# ── Cleaning ──────────────────────────────────────────────────────────────────

class CleaningRules(BaseModel):
    """Thresholds and switches for the four filtering rules (rules.json)."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    min_turnaround_hours: float = Field(default=1.0, gt=0)
    outlier_sigma:        float = Field(default=2.0, gt=0)
    min_combo_count:      int   = Field(default=5, gt=0)

    drop_empty:       bool = True
    drop_short:       bool = True
    drop_outliers:    bool = True
    drop_rare_combos: bool = True


# ── Features ──────────────────────────────────────────────────────────────────

class FeatureToggles(BaseModel):
    """Ablation switches (toggles.json).  Base features are always on."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    tidal:      bool = False
    weather:    bool = False
    congestion: bool = False

    tide_sensor:            str | None = None
    congestion_last_n:      int        = Field(default=10, ge=1)
    congestion_window_days: int        = Field(default=14, ge=1)


# ── Training ──────────────────────────────────────────────────────────────────

class TrainConfig(BaseModel):
    """Boosting hyperparameters (train.json).  These are the grid-search axes."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    n_trees:          int   = Field(default=500, ge=1)
    learning_rate:    float = Field(default=0.1, gt=0, le=1)
    max_depth:        int   = Field(default=6, ge=0)
    min_samples_leaf: int   = Field(default=5, ge=1)
    l2_leaf_reg:      float = Field(default=3.0, ge=0)
    ots_smoothing:    float = Field(default=1.0, gt=0)
    seed:             int   = 0


class CVConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    top_k:  int = Field(default=10, ge=1)
    seed:   int = 0
    n_jobs: int = 1


class GridSpec(BaseModel):
    """Cartesian grid over TrainConfig fields, e.g. {"axes": {"n_trees": [1, 200]}}."""
    model_config = ConfigDict(extra='forbid')

    base: TrainConfig            = Field(default_factory=TrainConfig)
    axes: dict[str, list[Any]]   = Field(..., min_length=1)

    @field_validator('axes')
    @classmethod
    def known_non_empty_axes(cls, v: dict[str, list]) -> dict[str, list]:
        unknown = sorted(set(v) - set(TrainConfig.model_fields))
        if unknown:
            raise ValueError(f'unknown TrainConfig fields: {", ".join(unknown)}')
        empty = sorted(k for k, values in v.items() if not values)
        if empty:
            raise ValueError(f'empty grid axes: {", ".join(empty)}')
        return v


# ── Synthetic data ────────────────────────────────────────────────────────────

class CargoProfile(BaseModel):
    """Generator parameters for one cargo type."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    name:              str
    base_hours:        float             = Field(..., ge=0)
    hours_per_tonne:   float             = Field(default=0.0, ge=0)
    noise_hours:       float             = Field(default=0.0, ge=0)
    tonnage_min:       float             = Field(default=1000.0, ge=0)
    tonnage_max:       float             = Field(default=10000.0, ge=0)
    fiscal_cargo_type: str | None        = None
    berths:            list[str]         = Field(default_factory=lambda: ['QUAI-1'], min_length=1)
    sides:             Literal['U', 'L', 'UL'] = 'UL'
    weight:            float             = Field(default=1.0, gt=0)

    @field_validator('name', 'fiscal_cargo_type', mode='before')
    @classmethod
    def collapse_label(cls, v):
        return _collapse(v)

    @model_validator(mode='after')
    def tonnage_range(self) -> 'CargoProfile':
        if self.tonnage_max < self.tonnage_min:
            raise ValueError('tonnage_max must be >= tonnage_min')
        return self


class SynthSpec(BaseModel):
    """Synthetic port-call generator configuration (synth.json)."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    cargo_types:           list[CargoProfile]
    first_year:            int   = 2008
    last_year:             int   = 2018
    calls_per_year:        int   = Field(default=100, ge=1)
    weekday_offsets_hours: list[float] = Field(default_factory=lambda: [0.0] * 7)
    berth_offsets_hours:   dict[str, float] = Field(default_factory=dict)
    dual_operation_share:  float = Field(default=0.2, ge=0, le=1)
    load_share:            float = Field(default=0.5, ge=0, le=1)
    vessel_pool:           int   = Field(default=300, ge=1)
    timezone:              str   = 'Europe/Paris'

    @field_validator('cargo_types')
    @classmethod
    def non_empty_cargo(cls, v):
        if not v:
            raise ValueError('cargo list is empty')
        names = [p.name for p in v]
        if len(set(names)) != len(names):
            raise ValueError('cargo type names must be unique')
        return v

    @field_validator('weekday_offsets_hours')
    @classmethod
    def seven_offsets(cls, v):
        if len(v) != 7:
            raise ValueError('weekday_offsets_hours needs 7 values (Mon..Sun)')
        return v

    @model_validator(mode='after')
    def year_span(self) -> 'SynthSpec':
        if self.last_year < self.first_year:
            raise ValueError('year range is empty (zero years)')
        return self


# ── AIS ───────────────────────────────────────────────────────────────────────

class VisitParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    min_dwell_min: float = Field(default=30.0, gt=0)
    max_gap_min:   float = Field(default=120.0, gt=0)


# ── Prediction service ────────────────────────────────────────────────────────

class PredictRequest(BaseModel):
    """Raw inputs of one port call.  The service builds the feature row itself."""
    model_config = ConfigDict(extra='forbid')

    arrival:             datetime
    unload:              CargoOperation | None = None
    load:                CargoOperation | None = None
    call_id:             str | None            = Field(default=None, max_length=100)
    vessel_id:           str | None            = Field(default=None, max_length=100)
    port_estimate_hours: float | None          = Field(default=None, ge=0)

    @field_validator('call_id', 'vessel_id', mode='before')
    @classmethod
    def collapse_ids(cls, v):
        return _collapse(v)

    @field_validator('arrival')
    @classmethod
    def arrival_has_offset(cls, v: datetime) -> datetime:
        if v.tzinfo is None:
            raise ValueError('arrival must carry a UTC offset (e.g. 2024-05-01T08:00:00Z)')
        return v


class PredictResponse(BaseModel):
    call_id:                    str | None
    arrival:                    datetime
    predicted_turnaround_hours: float
    etd:                        datetime
    model_version:              str
    features:                   dict[str, Any]


class ReloadRequest(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model_path:    str | None = None
    calendar_path: str | None = None
