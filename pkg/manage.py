"""
manage.py — Command-line pipeline for turnaround prediction.

Usage:
    python manage.py --seed 7 synthesize --output calls.csv
    python manage.py ingest --input raw.csv --output calls.csv --errors errors.json --lenient
    python manage.py clean --input calls.csv --rules rules.json --output cleaned.csv --report clean.json
    python manage.py holidays --country FR --from 2008 --to 2018 --output holidays.txt
    python manage.py train --input cleaned.csv --calendar holidays.txt --output model.gbtm
    python manage.py evaluate --input cleaned.csv --calendar holidays.txt --models gbdt,linear --report eval.md
    python manage.py serve --model model.gbtm --calendar holidays.txt --port 8080

Every verb reads JSON config files into the pydantic models of schemas.py.
The group-level --seed overrides every seed in those files.
"""

import json
import logging
import os
from pathlib import Path

import click
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from errors import TurnaroundError
from portcalls import format_timestamp, parse_dataset, serialize_dataset
from schemas import (
    CVConfig, CleaningRules, FeatureToggles, GridSpec, SynthSpec, TrainConfig, VisitParams,
    load_config,
)

logger = logging.getLogger(__name__)

MODEL_CHOICES = ('gbdt', 'linear', 'mean')


class PipelineGroup(click.Group):
    """Turns domain and config errors into a one-line message and exit code 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except TurnaroundError as exc:
            raise click.ClickException(str(exc)) from exc
        except ValidationError as exc:
            err = exc.errors()[0]
            where = '.'.join(str(p) for p in err['loc']) or exc.title
            raise click.ClickException(f'invalid {exc.title}: {where}: {err["msg"]}') from exc


@click.group(cls=PipelineGroup)
@click.option('--seed', type=int, default=None,
              help='Master seed; overrides the seeds in every config file')
@click.pass_context
def cli(ctx, seed):
    load_dotenv()
    logging.basicConfig(
        level=os.getenv('LOG_LEVEL', 'INFO').upper(),
        format='%(asctime)s [%(levelname)s] %(message)s',
    )
    ctx.obj = {'seed': seed}


# ── Shared option handling ────────────────────────────────────────────────────

def _seeded(ctx, config):
    seed = ctx.obj['seed']
    return config if seed is None else config.model_copy(update={'seed': seed})


def _train_config(ctx, path) -> tuple[TrainConfig, CVConfig]:
    """train.json holds TrainConfig fields plus an optional nested "cv" block."""
    raw = json.loads(Path(path).read_text()) if path else {}
    cv = CVConfig.model_validate(raw.pop('cv', {}))
    return _seeded(ctx, TrainConfig.model_validate(raw)), _seeded(ctx, cv)


def _port_tz() -> str:
    from features import DEFAULT_PORT_TZ
    return os.getenv('PORT_TIMEZONE', DEFAULT_PORT_TZ)


def _matrix(dataset, calendar_path, toggles_path=None, tides_path=None, weather_path=None,
            n_jobs=1):
    from features import HolidayCalendar, TideSeries, WeatherSeries, assemble_matrix

    toggles  = load_config(FeatureToggles, toggles_path)
    calendar = HolidayCalendar.from_file(calendar_path) if calendar_path else HolidayCalendar()
    tides    = TideSeries.from_csv(tides_path) if tides_path else None
    weather  = WeatherSeries.from_csv(weather_path) if weather_path else None
    return assemble_matrix(dataset, calendar, _port_tz(), toggles, tides, weather, n_jobs=n_jobs)


def feature_options(f):
    f = click.option('--calendar', type=click.Path(exists=True), help='Holiday file (one ISO date per line)')(f)
    f = click.option('--toggles', type=click.Path(exists=True), help='FeatureToggles JSON')(f)
    f = click.option('--tides', type=click.Path(exists=True), help='Tide CSV (timestamp,sensor_id,water_height_m)')(f)
    f = click.option('--weather', type=click.Path(exists=True), help='Hourly weather CSV')(f)
    return f


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------

@cli.command('synthesize')
@click.option('--spec', 'spec_path', type=click.Path(exists=True), help='SynthSpec JSON (default: demo spec)')
@click.option('--output', required=True, type=click.Path(), help='Port-call CSV to write')
@click.pass_context
def synthesize(ctx, spec_path, output):
    """Generate a synthetic port-call dataset."""
    from synthetic import demo_spec, synthesize_dataset

    spec = load_config(SynthSpec, spec_path) if spec_path else demo_spec()
    dataset = synthesize_dataset(spec, ctx.obj['seed'] or 0)
    serialize_dataset(dataset, output)
    click.echo(f'✓ Wrote {len(dataset)} synthetic calls to {output}')


@cli.command('ingest')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--output', required=True, type=click.Path(), help='Normalised CSV to write')
@click.option('--errors', 'errors_path', type=click.Path(), help='JSON list of rejected rows')
@click.option('--lenient', is_flag=True, help='Skip bad rows instead of failing on the first one')
def ingest(input_path, output, errors_path, lenient):
    """Validate a raw port-call CSV and write it back normalised."""
    dataset = parse_dataset(input_path, strict=not lenient)
    serialize_dataset(dataset, output)
    if errors_path:
        with open(errors_path, 'w') as fh:
            json.dump(list(dataset.rejected), fh, indent=2)
    click.echo(f'✓ {len(dataset)} calls ingested, {len(dataset.rejected)} rejected')


@cli.command('clean')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--rules', type=click.Path(exists=True), help='CleaningRules JSON')
@click.option('--output', required=True, type=click.Path())
@click.option('--report', type=click.Path(), help='Cleaning report (.json or .md)')
def clean(input_path, rules, output, report):
    """Apply the cleaning rules and write the surviving calls."""
    from cleaning import apply_filters
    from reporting import write_report

    dataset = parse_dataset(input_path)
    cleaned, cleaning_report = apply_filters(dataset, load_config(CleaningRules, rules))
    serialize_dataset(cleaned, output)
    if report:
        write_report(cleaning_report, report)
    click.echo(f'✓ {cleaning_report.input_size} → {cleaning_report.output_size} calls')


@cli.command('holidays')
@click.option('--country', default='FR', show_default=True)
@click.option('--from', 'first_year', type=int, required=True)
@click.option('--to', 'last_year', type=int, required=True)
@click.option('--output', required=True, type=click.Path())
def holidays_cmd(country, first_year, last_year, output):
    """Write a national holiday calendar file."""
    from features import HolidayCalendar

    if last_year < first_year:
        raise click.BadParameter('--to must not precede --from')
    calendar = HolidayCalendar.for_country(country, range(first_year, last_year + 1))
    calendar.to_file(output)
    click.echo(f'✓ {len(calendar)} {country} holidays written to {output}')


@cli.command('features')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@feature_options
@click.option('--output', required=True, type=click.Path())
@click.option('--n-jobs', default=1, show_default=True)
def features_cmd(input_path, calendar, toggles, tides, weather, output, n_jobs):
    """Assemble the feature matrix and write it as CSV."""
    matrix = _matrix(parse_dataset(input_path), calendar, toggles, tides, weather, n_jobs)
    matrix.to_csv(output)
    click.echo(f'✓ {matrix.n_rows} rows × {len(matrix.schema)} features written to {output}')


# ---------------------------------------------------------------------------
# Modelling
# ---------------------------------------------------------------------------

@cli.command('train')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--config', type=click.Path(exists=True), help='TrainConfig JSON')
@feature_options
@click.option('--model', 'kind', type=click.Choice(['gbdt', 'linear']), default='gbdt', show_default=True)
@click.option('--output', required=True, type=click.Path(), help='Model file to write')
@click.option('--importance', type=click.Path(), help='Feature-importance table (.md or .json)')
@click.pass_context
def train_cmd(ctx, input_path, config, calendar, toggles, tides, weather, kind, output, importance):
    """Train a model on a cleaned dataset and save it."""
    from gbdt import feature_importance, save_model, train
    from linreg import fit_linear, save_linear
    from reporting import importance_frame, importance_markdown, write_report

    train_config, cv = _train_config(ctx, config)
    matrix = _matrix(parse_dataset(input_path), calendar, toggles, tides, weather, cv.n_jobs)
    if kind == 'linear':
        version = save_linear(fit_linear(matrix), output)
    else:
        model = train(matrix, train_config)
        version = save_model(model, output)
        if importance:
            imp = feature_importance(model)
            write_report(importance_frame(imp), importance, markdown=importance_markdown(imp))
    click.echo(f'✓ {kind} model {version} saved to {output}')


def _factories(names: list[str], train_config: TrainConfig) -> dict:
    from evaluation import gbdt_factory, linear_factory, mean_factory

    build = {'gbdt': lambda: gbdt_factory(train_config), 'linear': linear_factory,
             'mean': mean_factory}
    unknown = [n for n in names if n not in build]
    if unknown:
        raise click.BadParameter(f'unknown model(s) {", ".join(unknown)}; '
                                 f'choose from {", ".join(MODEL_CHOICES)}', param_hint='--models')
    return {n: build[n]() for n in names}


@cli.command('evaluate')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--config', type=click.Path(exists=True), help='TrainConfig JSON (optional "cv" block)')
@feature_options
@click.option('--models', default='gbdt', show_default=True, help='Comma-separated: gbdt,linear,mean')
@click.option('--folds', type=click.Choice(['year']), default='year', show_default=True)
@click.option('--top-k', type=int, help='Cargo types listed per side (overrides the config)')
@click.option('--n-jobs', type=int, help='Parallel folds (overrides the config)')
@click.option('--report', required=True, type=click.Path(), help='Report (.json or .md)')
@click.pass_context
def evaluate(ctx, input_path, config, calendar, toggles, tides, weather, models, folds,
             top_k, n_jobs, report):
    """Leave-one-year-out evaluation of one or several models."""
    from evaluation import cross_validate
    from reporting import write_report

    train_config, cv = _train_config(ctx, config)
    overrides = {k: v for k, v in (('top_k', top_k), ('n_jobs', n_jobs)) if v is not None}
    cv = cv.model_copy(update=overrides)
    names = [m.strip() for m in models.split(',') if m.strip()]
    factories = _factories(names, train_config)
    matrix = _matrix(parse_dataset(input_path), calendar, toggles, tides, weather, cv.n_jobs)
    result = cross_validate(matrix, factories, cv)
    write_report(result, report)
    for name, metrics in result.overall.items():
        click.echo(f'{name}: MAE {metrics.mae:.3f} h  RMSE {metrics.rmse:.3f} h  MAPE {metrics.mape:.2f} %')


@cli.command('grid-search')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--grid', required=True, type=click.Path(exists=True), help='GridSpec JSON')
@feature_options
@click.option('--n-jobs', default=1, show_default=True)
@click.option('--report', required=True, type=click.Path(), help='Leaderboard (.json or .md)')
@click.option('--best', type=click.Path(), help='Write the winning TrainConfig as JSON')
@click.pass_context
def grid_search_cmd(ctx, input_path, grid, calendar, toggles, tides, weather, n_jobs, report, best):
    """Cross-validate every point of a hyperparameter grid."""
    from evaluation import grid_search
    from reporting import leaderboard_markdown, write_report

    spec = load_config(GridSpec, grid)
    spec = spec.model_copy(update={'base': _seeded(ctx, spec.base)})
    cv = _seeded(ctx, CVConfig(n_jobs=n_jobs))
    matrix = _matrix(parse_dataset(input_path), calendar, toggles, tides, weather, n_jobs)
    winner, board = grid_search(matrix, spec, cv)
    write_report(board, report, markdown=leaderboard_markdown(board))
    if best:
        with open(best, 'w') as fh:
            fh.write(winner.model_dump_json(indent=2) + '\n')
    click.echo(f'✓ best of {len(board)}: MAE {board[0].overall.mae:.3f} h')


@cli.command('predict')
@click.option('--model', 'model_path', required=True, type=click.Path(exists=True))
@click.option('--calendar', type=click.Path(exists=True))
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--output', required=True, type=click.Path())
def predict_cmd(model_path, calendar, input_path, output):
    """Batch predictions (call_id, arrival, hours, etd, version) for a port-call CSV."""
    from snapshot import load_snapshot, predict_call

    snap = load_snapshot(model_path, calendar, _port_tz())
    rows, skipped = [], 0
    for call in parse_dataset(input_path, strict=False):
        if call.arrival is None:
            skipped += 1
            continue
        hours, etd, _ = predict_call(snap, call)
        rows.append({
            'call_id':                    call.call_id,
            'arrival':                    format_timestamp(call.arrival),
            'predicted_turnaround_hours': hours,
            'etd':                        format_timestamp(etd),
            'model_version':              snap.version,
        })
    if skipped:
        logger.warning('%d calls without arrival were not predicted', skipped)
    pd.DataFrame(rows, columns=['call_id', 'arrival', 'predicted_turnaround_hours', 'etd',
                                'model_version']).to_csv(output, index=False)
    click.echo(f'✓ {len(rows)} predictions written to {output}')


# ---------------------------------------------------------------------------
# AIS
# ---------------------------------------------------------------------------

@cli.command('ais-visits')
@click.option('--track', required=True, type=click.Path(exists=True), help='AIS CSV')
@click.option('--fence', required=True, type=click.Path(exists=True), help='Geofence JSON')
@click.option('--params', type=click.Path(exists=True), help='VisitParams JSON')
@click.option('--out', required=True, type=click.Path(), help='Visits CSV to write')
@click.option('--n-jobs', default=1, show_default=True)
def ais_visits(track, fence, params, out, n_jobs):
    """Detect port visits in AIS position reports."""
    from ais import detect_all_visits, load_geofence, read_track_csv, write_visits_csv

    visits = detect_all_visits(read_track_csv(track), load_geofence(fence),
                               load_config(VisitParams, params), n_jobs=n_jobs)
    write_visits_csv(visits, out)
    click.echo(f'✓ {len(visits)} visits written to {out}')


@cli.command('reconcile')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--visits', required=True, type=click.Path(exists=True))
@click.option('--tolerance', default=12.0, show_default=True, help='Match window padding (hours)')
@click.option('--id-map', type=click.Path(exists=True), help='CSV with vessel_id,mmsi columns')
@click.option('--output', required=True, type=click.Path())
@click.option('--report', type=click.Path(), help='Reconciliation report (.json or .md)')
def reconcile_cmd(input_path, visits, tolerance, id_map, output, report):
    """Fill missing arrival/departure times from AIS visits."""
    from ais import read_visits_csv, reconcile
    from reporting import to_markdown, write_report

    mapping = None
    if id_map:
        frame = pd.read_csv(id_map, dtype=str)
        mapping = dict(zip(frame['vessel_id'].str.strip(), frame['mmsi'].str.strip()))
    dataset, rec = reconcile(parse_dataset(input_path, strict=False), read_visits_csv(visits),
                             tolerance, mapping)
    serialize_dataset(dataset, output)
    if report:
        table = pd.DataFrame([e.model_dump() for e in rec.entries],
                             columns=['call_id', 'status', 'fields', 'candidates', 'detail'])
        write_report(rec, report, markdown='# AIS reconciliation\n\n' + to_markdown(table))
    click.echo(f'✓ {len(rec.filled)} filled, {len(rec.ambiguous)} ambiguous, '
               f'{len(rec.unmatched)} unmatched')


# ---------------------------------------------------------------------------
# Exploration / live comparison
# ---------------------------------------------------------------------------

@cli.command('explore')
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True))
@click.option('--calendar', type=click.Path(exists=True))
@click.option('--weather', type=click.Path(exists=True))
@click.option('--report', required=True, type=click.Path(), help='Tables (.json or .md)')
def explore(input_path, calendar, weather, report):
    """Per-cargo, per-weekday and precipitation statistics."""
    from eda import cargo_profile, precipitation_profile, weekday_profile
    from features import HolidayCalendar, WeatherSeries
    from reporting import to_markdown

    dataset = parse_dataset(input_path)
    cal = HolidayCalendar.from_file(calendar) if calendar else HolidayCalendar()
    tables = {
        'Unloading cargo types': cargo_profile(dataset, 'U'),
        'Loading cargo types':   cargo_profile(dataset, 'L'),
        'Arrival weekday':       weekday_profile(dataset, cal, _port_tz()),
    }
    if weather:
        tables['Precipitation (48 h after arrival)'] = precipitation_profile(
            dataset, WeatherSeries.from_csv(weather))

    if report.lower().endswith(('.md', '.markdown')):
        text = '\n'.join(f'## {title}\n\n{to_markdown(t)}' for title, t in tables.items())
    else:
        text = json.dumps({title: json.loads(t.to_json(orient='records'))
                           for title, t in tables.items()}, indent=2)
    with open(report, 'w') as fh:
        fh.write(text if text.endswith('\n') else text + '\n')
    click.echo(f'✓ {len(tables)} tables written to {report}')


@cli.command('compare-live')
@click.option('--calls', required=True, type=click.Path(exists=True), help='Closed calls CSV')
@click.option('--report', required=True, type=click.Path())
@click.option('--min-count', default=3, show_default=True)
def compare_live(calls, report, min_count):
    """Compare logged predictions and port estimates with actual turnarounds."""
    from database import SessionLocal, init_db
    from evaluation import live_comparison
    from models import PredictionRecord
    from reporting import write_report

    init_db()
    with SessionLocal() as session:
        records = session.query(PredictionRecord).all()
    dataset = parse_dataset(calls, strict=False)
    result = live_comparison(records, dataset, min_count)
    write_report(result, report)
    click.echo(f'✓ live comparison written to {report}')


# ---------------------------------------------------------------------------
# Serving
# ---------------------------------------------------------------------------

@cli.command('serve')
@click.option('--model', 'model_path', required=True, type=click.Path(exists=True))
@click.option('--calendar', type=click.Path(exists=True))
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', default=8080, show_default=True)
@click.option('--workers', default=1, show_default=True)
def serve(model_path, calendar, host, port, workers):
    """Run the prediction API."""
    import uvicorn

    os.environ['MODEL_PATH'] = os.path.abspath(model_path)
    if calendar:
        os.environ['CALENDAR_PATH'] = os.path.abspath(calendar)
    uvicorn.run('app:app', host=host, port=port, workers=workers)


if __name__ == '__main__':
    cli()
