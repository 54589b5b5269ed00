"""
synthetic.py — Seeded synthetic port-call generator for desk-scale runs.

Turnaround of each call is generated as

    base(dominant cargo) + Σ rate(cargo)·tonnage + weekday offset
                         + berth offset + noise(dominant cargo)·N(0, 1)

floored at MIN_SYNTH_HOURS.  The dominant cargo is the unload cargo when the
call unloads, else the load cargo.  The weekday is taken in the configured
local timezone, the way features.py reads it back.

synthesize_dataset(spec, seed) is a pure function of its arguments: the
returned Dataset carries no ingestion timestamp.
"""

import logging
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np

from portcalls import CargoOperation, Dataset, PortCall
from schemas import CargoProfile, SynthSpec

logger = logging.getLogger(__name__)

MIN_SYNTH_HOURS = 1.0


def _pick(rng: np.random.Generator, profiles: list[CargoProfile]) -> CargoProfile:
    weights = np.array([p.weight for p in profiles], dtype=float)
    return profiles[int(rng.choice(len(profiles), p=weights / weights.sum()))]


def _operation(rng: np.random.Generator, profile: CargoProfile) -> CargoOperation:
    tonnage = round(float(rng.uniform(profile.tonnage_min, profile.tonnage_max)), 1)
    berth   = profile.berths[int(rng.integers(len(profile.berths)))]
    return CargoOperation(
        cargo_type        = profile.name,
        fiscal_cargo_type = profile.fiscal_cargo_type,
        tonnage           = tonnage,
        berth             = berth,
    )


def synthesize_dataset(spec: SynthSpec, seed: int) -> Dataset:
    """Generate a time-ordered Dataset spanning spec.first_year..spec.last_year."""
    if not spec.cargo_types:
        raise ValueError('cargo list is empty')
    if spec.last_year < spec.first_year:
        raise ValueError('year range is empty (zero years)')

    rng      = np.random.default_rng(seed)
    tz       = ZoneInfo(spec.timezone)
    profiles = {p.name: p for p in spec.cargo_types}
    unloaders = [p for p in spec.cargo_types if 'U' in p.sides]
    loaders   = [p for p in spec.cargo_types if 'L' in p.sides]

    drafts = []
    for year in range(spec.first_year, spec.last_year + 1):
        start   = datetime(year, 1, 1, tzinfo=timezone.utc)
        seconds = (datetime(year + 1, 1, 1, tzinfo=timezone.utc) - start).total_seconds()
        offsets = np.sort(rng.integers(0, int(seconds), size=spec.calls_per_year))

        for offset in offsets:
            arrival = start + timedelta(seconds=int(offset))

            dual = rng.random() < spec.dual_operation_share
            loading = rng.random() < spec.load_share
            unload = load = None
            if (dual or not loading) and unloaders:
                unload = _operation(rng, _pick(rng, unloaders))
            if (dual or loading or unload is None) and loaders:
                load = _operation(rng, _pick(rng, loaders))
            if unload is None and load is None:
                unload = _operation(rng, _pick(rng, spec.cargo_types))

            dominant = unload or load
            profile  = profiles[dominant.cargo_type]
            hours    = profile.base_hours
            for op in (unload, load):
                if op is not None:
                    hours += profiles[op.cargo_type].hours_per_tonne * op.tonnage
            hours += spec.weekday_offsets_hours[arrival.astimezone(tz).weekday()]
            hours += spec.berth_offsets_hours.get(dominant.berth, 0.0)
            noise  = rng.standard_normal()
            hours += profile.noise_hours * noise
            hours  = max(hours, MIN_SYNTH_HOURS)

            vessel = f'IMO{9100000 + int(rng.integers(spec.vessel_pool))}'
            drafts.append((arrival, vessel, hours, unload, load))

    calls = []
    for idx, (arrival, vessel, hours, unload, load) in enumerate(drafts, start=1):
        calls.append(PortCall(
            call_id   = f'SYN{idx:06d}',
            vessel_id = vessel,
            arrival   = arrival,
            departure = arrival + timedelta(microseconds=round(hours * 3_600_000_000)),
            unload    = unload,
            load      = load,
        ))

    logger.info('Synthesized %d port calls over %d years (seed=%d)',
                len(calls), spec.last_year - spec.first_year + 1, seed)
    return Dataset(calls=tuple(calls), source=f'synthetic:seed={seed}')


# ── Built-in generator configurations ────────────────────────────────────────

def demo_spec(**overrides) -> SynthSpec:
    """Liquid bulk with low noise, dry bulk with high noise, a weekend slowdown.

    Tonnage rates differ per type so cargo type and tonnage interact.
    """
    params = dict(
        cargo_types=[
            CargoProfile(name='BUTADIENE', base_hours=20.0, hours_per_tonne=0.002,
                         noise_hours=2.0, tonnage_min=1000, tonnage_max=6000,
                         fiscal_cargo_type='LIQUID CHEMICALS', berths=['BASSENS-1'],
                         weight=2.0),
            CargoProfile(name='CRUDE OIL', base_hours=24.0, hours_per_tonne=0.0005,
                         noise_hours=4.0, tonnage_min=5000, tonnage_max=40000,
                         fiscal_cargo_type='HYDROCARBONS', berths=['AMBES-1', 'AMBES-2'],
                         sides='U', weight=2.0),
            CargoProfile(name='WHEAT', base_hours=30.0, hours_per_tonne=0.004,
                         noise_hours=10.0, tonnage_min=3000, tonnage_max=25000,
                         fiscal_cargo_type='CEREALS', berths=['BASSENS-2'],
                         sides='L', weight=3.0),
            CargoProfile(name='SUNFLOWER BULK', base_hours=40.0, hours_per_tonne=0.001,
                         noise_hours=18.0, tonnage_min=2000, tonnage_max=15000,
                         fiscal_cargo_type='OILSEEDS', berths=['BASSENS-2', 'BLAYE'],
                         weight=1.5),
        ],
        weekday_offsets_hours=[0.0, 0.0, 0.0, 0.0, 6.0, 10.0, 4.0],
        berth_offsets_hours={'BLAYE': 5.0},
    )
    params.update(overrides)
    return SynthSpec(**params)
