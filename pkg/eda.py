"""
eda.py — Exploratory statistics over a (cleaned) port-call dataset.

Tabular only: each profile returns a DataFrame that reporting.to_markdown()
or to_json() can render.  Open calls are skipped.
"""

import logging

import numpy as np
import pandas as pd

from errors import EmptyDatasetError
from features import DAY_LABELS, NONE_LABEL, HolidayCalendar, WeatherSeries, port_zone
from portcalls import Dataset, turnaround_hours

logger = logging.getLogger(__name__)

SIDES            = {'U': 'unload', 'L': 'load'}
PRECIP_BANDS     = (0.0, 0.1, 5.0, 20.0, np.inf)
PRECIP_WINDOW_H  = 48


def _closed(dataset: Dataset) -> list:
    calls = [c for c in dataset if not c.is_open]
    if not calls:
        raise EmptyDatasetError('no closed calls to profile')
    return calls


def cargo_profile(dataset: Dataset, side: str = 'U') -> pd.DataFrame:
    """Per cargo type on one side: turnaround and per-tonnage processing time.

    Normalised time is hours per 1000 t; calls with zero tonnage on that side
    are left out of the normalised columns only.
    """
    if side not in SIDES:
        raise ValueError(f'side must be one of {sorted(SIDES)}')
    records = []
    for call in _closed(dataset):
        op = getattr(call, SIDES[side])
        if op is None:
            continue
        hours   = turnaround_hours(call)
        tonnage = op.tonnage or 0.0
        records.append({
            'cargo_type': op.cargo_type or NONE_LABEL,
            'hours':      hours,
            'tonnage':    tonnage,
            'per_kt':     hours / (tonnage / 1000.0) if tonnage > 0 else np.nan,
        })
    columns = ['cargo_type', 'count', 'mean_hours', 'median_hours', 'std_hours',
               'mean_tonnage', 'mean_hours_per_kt', 'std_hours_per_kt', 'cv_hours_per_kt']
    if not records:
        return pd.DataFrame(columns=columns)

    frame = pd.DataFrame(records)
    grouped = frame.groupby('cargo_type')
    table = pd.DataFrame({
        'count':             grouped['hours'].size(),
        'mean_hours':        grouped['hours'].mean(),
        'median_hours':      grouped['hours'].median(),
        'std_hours':         grouped['hours'].std(ddof=0),
        'mean_tonnage':      grouped['tonnage'].mean(),
        'mean_hours_per_kt': grouped['per_kt'].mean(),
        'std_hours_per_kt':  grouped['per_kt'].std(ddof=0),
    })
    table['cv_hours_per_kt'] = table['std_hours_per_kt'] / table['mean_hours_per_kt']
    table = table.reset_index()
    return table.sort_values(['count', 'cargo_type'], ascending=[False, True],
                             kind='stable')[columns].reset_index(drop=True)


def weekday_profile(dataset: Dataset, calendar: HolidayCalendar | None = None,
                    tz=None) -> pd.DataFrame:
    """Turnaround by local arrival weekday, then holiday vs. non-holiday arrivals."""
    calendar = calendar or HolidayCalendar()
    zone = port_zone(tz)
    records = []
    for call in _closed(dataset):
        local = call.arrival.astimezone(zone)
        records.append({
            'day':     DAY_LABELS[local.weekday()],
            'holiday': local.date() in calendar,
            'hours':   turnaround_hours(call),
        })
    frame = pd.DataFrame(records)

    def _summary(label, hours: pd.Series) -> dict:
        return {'group': label, 'count': int(hours.size),
                'mean_hours': float(hours.mean()) if hours.size else np.nan,
                'median_hours': float(hours.median()) if hours.size else np.nan}

    rows = [_summary(day, frame.loc[frame['day'] == day, 'hours']) for day in DAY_LABELS]
    rows.append(_summary('holiday ±0', frame.loc[frame['holiday'], 'hours']))
    rows.append(_summary('no holiday', frame.loc[~frame['holiday'], 'hours']))
    return pd.DataFrame(rows)


def _band_labels(bands) -> list[str]:
    return [f'[{lo:g}, {hi:g})' for lo, hi in zip(bands[:-1], bands[1:])]


def precipitation_profile(dataset: Dataset, weather: WeatherSeries,
                          bands=PRECIP_BANDS) -> pd.DataFrame:
    """Mean turnaround per (cargo type, band of 48 h precipitation after arrival).

    Calls whose 48 h window has a missing hour are skipped.
    """
    bands = tuple(float(b) for b in bands)
    if len(bands) < 2 or any(b <= a for a, b in zip(bands, bands[1:])):
        raise ValueError('precipitation bands must be strictly increasing')
    records, skipped = [], 0
    for call in _closed(dataset):
        start = pd.Timestamp(call.arrival).tz_convert('UTC').floor('h')
        precip = weather.window(start, PRECIP_WINDOW_H)['precipitation_mm']
        if precip.isna().any():
            skipped += 1
            continue
        hours = turnaround_hours(call)
        for cargo in call.cargo_types():
            records.append({'cargo_type': cargo, 'precip_48h': float(precip.sum()),
                            'hours': hours})
    if skipped:
        logger.warning('Precipitation profile: %d calls without full weather coverage', skipped)
    columns = ['cargo_type', 'band', 'count', 'mean_hours']
    if not records:
        return pd.DataFrame(columns=columns)

    frame = pd.DataFrame(records)
    frame['band'] = pd.cut(frame['precip_48h'], bins=list(bands), right=False,
                           labels=_band_labels(bands))
    table = (frame.groupby(['cargo_type', 'band'], observed=True)['hours']
             .agg(['size', 'mean'])
             .rename(columns={'size': 'count', 'mean': 'mean_hours'})
             .reset_index())
    table['band'] = table['band'].astype(str)
    return table[columns]
