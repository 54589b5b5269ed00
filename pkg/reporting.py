"""
reporting.py — JSON and Markdown rendering of pipeline reports.

JSON is the pydantic dump of the report model.  Markdown tables are rendered
with pandas (tabulate backend) in the layouts used by the evaluation tables:
per-cargo rows followed by Top-K / All aggregates, one MAE/RMSE/MAPE column
group per model, and a two-column MAE comparison against port estimates.
"""

import json
import logging
from pathlib import Path

import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

FLOAT_FMT = '.2f'


def _table(frame: pd.DataFrame) -> str:
    if frame.empty:
        return '_(no rows)_\n'
    return frame.to_markdown(index=False, floatfmt=FLOAT_FMT) + '\n'


# ── Evaluation ────────────────────────────────────────────────────────────────

def _metric_columns(models: list[str]) -> list[tuple[str, str, str]]:
    """(column title, model, metric); MAE columns first, then RMSE, then MAPE."""
    cols = []
    for metric, title in (('mae', 'MAE'), ('rmse', 'RMSE'), ('mape', 'MAPE %')):
        for m in models:
            cols.append((f'{title} {m}' if len(models) > 1 else title, m, metric))
    return cols


def _rows_frame(rows, models: list[str], first: str = 'Cargo type') -> pd.DataFrame:
    cols = _metric_columns(models)
    records = []
    for r in rows:
        rec = {first: r.label, 'n': r.n}
        for title, m, metric in cols:
            rec[title] = getattr(r.metrics[m], metric)
        records.append(rec)
    return pd.DataFrame(records, columns=[first, 'n'] + [c[0] for c in cols])


def eval_report_markdown(report) -> str:
    parts = [f'# Leave-one-year-out evaluation\n\nModels: {", ".join(report.models)} '
             f'(seed {report.seed})\n']
    for side, title in (('U', 'Unloading'), ('L', 'Loading')):
        rows = [r for r in report.rows if r.side == side]
        if rows:
            parts.append(f'## {title} ({side})\n')
            parts.append(_table(_rows_frame(rows, report.models)))

    overall = pd.DataFrame([
        {'Model': m, 'n': met.n, 'MAE': met.mae, 'RMSE': met.rmse, 'MAPE %': met.mape}
        for m, met in report.overall.items()
    ])
    parts.append('## Overall\n')
    parts.append(_table(overall))

    folds = []
    for f in report.folds:
        rec = {'Year': f.year, 'Train': f.n_train, 'Test': f.n_test}
        for m, met in f.metrics.items():
            rec[f'MAE {m}' if len(report.models) > 1 else 'MAE'] = met.mae
        folds.append(rec)
    parts.append('## Folds\n')
    parts.append(_table(pd.DataFrame(folds)))

    if report.warnings:
        parts.append('## Warnings\n')
        parts.append(''.join(f'- {w}\n' for w in report.warnings))
    return '\n'.join(parts)


def paired_report_markdown(report) -> str:
    parts = ['# Model vs port estimates\n',
             f'Cargo types with at least {report.min_count} calls.\n']
    sides = []
    for r in report.rows:
        if r.side not in sides:
            sides.append(r.side)
    for side in sides:
        rows = [r for r in report.rows if r.side == side]
        frame = pd.DataFrame([
            {'Cargo type': r.label, 'n': r.n,
             **{f'MAE {s}': r.metrics[s].mae for s in report.sources}}
            for r in rows
        ])
        if side:
            parts.append(f'## Side {side}\n')
        parts.append(_table(frame))
    return '\n'.join(parts)


def leaderboard_markdown(board) -> str:
    frame = pd.DataFrame([
        {'Rank': e.rank, **e.config.model_dump(),
         'MAE': e.overall.mae, 'RMSE': e.overall.rmse, 'MAPE %': e.overall.mape}
        for e in board
    ])
    return '# Grid search\n\n' + _table(frame)


# ── Training / cleaning ───────────────────────────────────────────────────────

def importance_frame(importances: dict[str, float]) -> pd.DataFrame:
    items = sorted(importances.items(), key=lambda kv: (-kv[1], kv[0]))
    return pd.DataFrame(items, columns=['Feature', 'Importance'])


def importance_markdown(importances: dict[str, float]) -> str:
    return '# Feature importance (sum = 100)\n\n' + _table(importance_frame(importances))


def cleaning_markdown(report) -> str:
    frame = pd.DataFrame(
        [{'Rule': rule, 'Removed': n} for rule, n in report.removed_by_rule.items()])
    return (f'# Cleaning\n\nInput: {report.input_size} calls, '
            f'output: {report.output_size} calls\n\n' + _table(frame))


# ── Writers ───────────────────────────────────────────────────────────────────

_MARKDOWN = {
    'EvalReport':     eval_report_markdown,
    'PairedReport':   paired_report_markdown,
    'CleaningReport': cleaning_markdown,
}


def to_json(obj) -> str:
    if isinstance(obj, BaseModel):
        return obj.model_dump_json(indent=2)
    if isinstance(obj, pd.DataFrame):
        return obj.to_json(orient='records', indent=2)
    if isinstance(obj, list) and obj and isinstance(obj[0], BaseModel):
        return json.dumps([o.model_dump(mode='json') for o in obj], indent=2)
    return json.dumps(obj, indent=2, sort_keys=True, default=str)


def to_markdown(obj) -> str:
    if isinstance(obj, pd.DataFrame):
        return _table(obj)
    render = _MARKDOWN.get(type(obj).__name__)
    if render is None:
        raise TypeError(f'no Markdown layout for {type(obj).__name__}')
    return render(obj)


def write_report(obj, path, markdown: str | None = None) -> None:
    """Write `obj` as Markdown when the path ends in .md, else as JSON.

    `markdown` overrides the default Markdown rendering.
    """
    path = Path(path)
    if path.suffix.lower() in ('.md', '.markdown'):
        text = markdown if markdown is not None else to_markdown(obj)
    else:
        text = to_json(obj)
    path.write_text(text if text.endswith('\n') else text + '\n')
    logger.info('Wrote report to %s', path)
