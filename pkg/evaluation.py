"""
evaluation.py — Leave-one-year-out evaluation harness.

    compute_metrics(truth, predicted)              → Metrics (MAE, RMSE, MAPE %)
    leave_one_year_out(matrix)                     → list[Fold], one per arrival year
    cross_validate(matrix, factories, cv)          → EvalReport
    grid_search(matrix, grid, cv)                  → (best TrainConfig, leaderboard)
    compare_with_port(pred, port, truth, labels)   → PairedReport
    live_comparison(records, calls)                → PairedReport

Out-of-fold predictions are pooled over all folds before per-cargo metrics
are computed.  A call counts on side U under its unload cargo type and on
side L under its load cargo type.

A model factory is any callable (train_matrix, seed) → predictor, where the
predictor maps a FeatureMatrix to an array of hours.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field
from sklearn.metrics import mean_absolute_error, mean_absolute_percentage_error, mean_squared_error
from sklearn.model_selection import LeaveOneGroupOut, ParameterGrid

from errors import EvaluationError, OpenCallError
from features import NONE_LABEL, FeatureMatrix
from gbdt import predict_matrix, train
from linreg import DEFAULT_RIDGE, fit_linear, predict_linear_matrix
from portcalls import Dataset, turnaround_hours
from schemas import CVConfig, GridSpec, TrainConfig

logger = logging.getLogger(__name__)

SIDE_COLUMNS = {'U': 'cargo_type_u', 'L': 'cargo_type_l'}

Predictor    = Callable[[FeatureMatrix], np.ndarray]
ModelFactory = Callable[[FeatureMatrix, int], Predictor]


# ── Metrics ───────────────────────────────────────────────────────────────────

class Metrics(BaseModel):
    """MAE and RMSE in hours, MAPE in percent.  Undefined (None) when n == 0."""
    n:    int
    mae:  float | None = None
    rmse: float | None = None
    mape: float | None = None


def compute_metrics(truth, predicted) -> Metrics:
    y    = np.asarray(truth, dtype=float).ravel()
    yhat = np.asarray(predicted, dtype=float).ravel()
    if len(y) != len(yhat):
        raise EvaluationError(f'length mismatch: {len(y)} truths vs {len(yhat)} predictions')
    if len(y) == 0:
        raise EvaluationError('cannot compute metrics of an empty sample')
    return Metrics(
        n    = len(y),
        mae  = float(mean_absolute_error(y, yhat)),
        rmse = float(np.sqrt(mean_squared_error(y, yhat))),
        mape = float(100.0 * mean_absolute_percentage_error(y, yhat)),
    )


def _metrics_or_empty(truth, predicted) -> Metrics:
    return compute_metrics(truth, predicted) if len(truth) else Metrics(n=0)


# ── Folds ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Fold:
    year:  int
    train: np.ndarray
    test:  np.ndarray


def leave_one_year_out(matrix: FeatureMatrix) -> list[Fold]:
    """One fold per distinct arrival year, ascending; each trains on all other years."""
    years = np.asarray(matrix.years)
    distinct = np.unique(years)
    if len(distinct) < 2:
        raise EvaluationError(
            f'leave-one-year-out needs at least 2 arrival years, got {len(distinct)}')
    splitter = LeaveOneGroupOut()
    return [
        Fold(year=int(years[test[0]]), train=train_idx, test=test)
        for train_idx, test in splitter.split(np.zeros((len(years), 1)), groups=years)
    ]


def fold_seeds(master_seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


# ── Model factories ───────────────────────────────────────────────────────────

def gbdt_factory(config: TrainConfig | None = None) -> ModelFactory:
    config = config or TrainConfig()

    def factory(train_matrix: FeatureMatrix, seed: int) -> Predictor:
        model = train(train_matrix, config.model_copy(update={'seed': seed}))
        return lambda m: predict_matrix(model, m)
    return factory


def linear_factory(ridge: float = DEFAULT_RIDGE) -> ModelFactory:
    def factory(train_matrix: FeatureMatrix, seed: int) -> Predictor:
        model = fit_linear(train_matrix, ridge)
        return lambda m: predict_linear_matrix(model, m)
    return factory


def mean_factory() -> ModelFactory:
    """Predicts the training mean everywhere."""
    def factory(train_matrix: FeatureMatrix, seed: int) -> Predictor:
        mean = float(train_matrix.target.mean())
        return lambda m: np.full(m.n_rows, mean)
    return factory


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

class MetricsRow(BaseModel):
    side:    str | None
    label:   str
    kind:    str                       # 'type' | 'top' | 'all' | 'combined'
    n:       int
    metrics: dict[str, Metrics]


class FoldResult(BaseModel):
    year:    int
    n_train: int
    n_test:  int
    metrics: dict[str, Metrics]


class EvalReport(BaseModel):
    models:   list[str]
    top_k:    int
    seed:     int
    rows:     list[MetricsRow]
    overall:  dict[str, Metrics]
    folds:    list[FoldResult]
    warnings: list[str] = Field(default_factory=list)

    def row(self, side: str | None, label: str) -> MetricsRow:
        for r in self.rows:
            if r.side == side and r.label == label:
                return r
        raise KeyError(f'no report row ({side}, {label})')

    def side_rows(self, side: str, kind: str = 'type') -> list[MetricsRow]:
        return [r for r in self.rows if r.side == side and r.kind == kind]


def _run_fold(factory: ModelFactory, matrix: FeatureMatrix, fold: Fold, seed: int) -> np.ndarray:
    predictor = factory(matrix.subset(fold.train), seed)
    return np.asarray(predictor(matrix.subset(fold.test)), dtype=float)


def out_of_fold_predictions(matrix: FeatureMatrix, factories: dict[str, ModelFactory],
                            cv: CVConfig | None = None) -> tuple[dict[str, np.ndarray], list[Fold]]:
    """Pooled out-of-fold predictions per model, in matrix row order."""
    cv = cv or CVConfig()
    folds = leave_one_year_out(matrix)
    seeds = fold_seeds(cv.seed, len(folds))
    jobs = [(name, k) for name in factories for k in range(len(folds))]
    results = Parallel(n_jobs=cv.n_jobs)(
        delayed(_run_fold)(factories[name], matrix, folds[k], seeds[k]) for name, k in jobs
    )
    pooled = {name: np.full(matrix.n_rows, np.nan) for name in factories}
    for (name, k), pred in zip(jobs, results):
        pooled[name][folds[k].test] = pred
        logger.info('Fold %d (%s): %d train / %d test rows',
                    folds[k].year, name, len(folds[k].train), len(folds[k].test))
    return pooled, folds


def _top_labels(labels: list[str], k: int) -> list[str]:
    counts = Counter(labels)
    return [label for label, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def _side_rows(side: str, labels: list, y: np.ndarray, pooled: dict[str, np.ndarray],
               top_k: int) -> list[MetricsRow]:
    present = [i for i, label in enumerate(labels) if label not in (None, NONE_LABEL)]
    if not present:
        return []
    names = [str(labels[i]) for i in present]
    top = _top_labels(names, top_k)

    def _row(label, kind, rows):
        rows = np.asarray(rows, dtype=int)
        return MetricsRow(side=side, label=label, kind=kind, n=len(rows),
                          metrics={m: _metrics_or_empty(y[rows], p[rows])
                                   for m, p in pooled.items()})

    out = [_row(label, 'type', [i for i, n in zip(present, names) if n == label])
           for label in top]
    top_set = set(top)
    out.append(_row(f'Top {top_k} cargo types ({side})', 'top',
                    [i for i, n in zip(present, names) if n in top_set]))
    out.append(_row(f'All cargo types ({side})', 'all', present))
    return out


def _unseen_type_warnings(matrix: FeatureMatrix, folds: list[Fold]) -> list[str]:
    warnings = []
    for side, column in SIDE_COLUMNS.items():
        if column not in matrix.schema.names:
            continue
        labels = matrix.column(column)
        for fold in folds:
            seen = {labels[i] for i in fold.train}
            unseen = sorted({str(labels[i]) for i in fold.test} - seen - {NONE_LABEL})
            for label in unseen:
                msg = f'cargo type {label!r} ({side}) in {fold.year} is absent from its training years'
                logger.warning(msg)
                warnings.append(msg)
    return warnings


def cross_validate(matrix: FeatureMatrix, factories, cv: CVConfig | None = None) -> EvalReport:
    """Leave-one-year-out evaluation of one or several model factories."""
    cv = cv or CVConfig()
    if callable(factories):
        factories = {'model': factories}
    pooled, folds = out_of_fold_predictions(matrix, factories, cv)
    y = matrix.target

    rows: list[MetricsRow] = []
    for side, column in SIDE_COLUMNS.items():
        if column in matrix.schema.names:
            rows += _side_rows(side, matrix.column(column), y, pooled, cv.top_k)

    fold_results = [
        FoldResult(
            year    = fold.year,
            n_train = len(fold.train),
            n_test  = len(fold.test),
            metrics = {m: compute_metrics(y[fold.test], p[fold.test]) for m, p in pooled.items()},
        )
        for fold in folds
    ]
    report = EvalReport(
        models   = list(factories),
        top_k    = cv.top_k,
        seed     = cv.seed,
        rows     = rows,
        overall  = {m: compute_metrics(y, p) for m, p in pooled.items()},
        folds    = fold_results,
        warnings = _unseen_type_warnings(matrix, folds),
    )
    for m, metrics in report.overall.items():
        logger.info('%s: pooled MAE %.3f h, RMSE %.3f h, MAPE %.2f%%',
                    m, metrics.mae, metrics.rmse, metrics.mape)
    return report


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

class LeaderboardEntry(BaseModel):
    rank:    int
    config:  TrainConfig
    overall: Metrics


def _config_key(config: TrainConfig) -> str:
    return json.dumps(config.model_dump(), sort_keys=True)


def _score_point(matrix: FeatureMatrix, config: TrainConfig, cv: CVConfig) -> Metrics:
    inner = cv.model_copy(update={'n_jobs': 1})
    pooled, _ = out_of_fold_predictions(matrix, {'gbdt': gbdt_factory(config)}, inner)
    return compute_metrics(matrix.target, pooled['gbdt'])


def grid_search(matrix: FeatureMatrix, grid: GridSpec,
                cv: CVConfig | None = None) -> tuple[TrainConfig, list[LeaderboardEntry]]:
    """Every grid point is cross-validated; lowest MAE wins, then RMSE, then config JSON."""
    cv = cv or CVConfig()
    base = grid.base.model_dump()
    configs = [TrainConfig.model_validate({**base, **point}) for point in ParameterGrid(grid.axes)]
    logger.info('Grid search over %d configurations', len(configs))

    scores = Parallel(n_jobs=cv.n_jobs)(
        delayed(_score_point)(matrix, config, cv) for config in configs
    )
    ranked = sorted(zip(configs, scores), key=lambda cs: (cs[1].mae, cs[1].rmse, _config_key(cs[0])))
    board = [LeaderboardEntry(rank=i, config=c, overall=s) for i, (c, s) in enumerate(ranked, start=1)]
    best = board[0]
    logger.info('Best configuration: %s (MAE %.3f h)', _config_key(best.config), best.overall.mae)
    return best.config, board


# ---------------------------------------------------------------------------
# Comparison against port estimates
# ---------------------------------------------------------------------------

MODEL_SOURCE = 'model'
PORT_SOURCE  = 'port'


class PairedReport(BaseModel):
    sources:   list[str]
    min_count: int
    rows:      list[MetricsRow]


def compare_with_port(predicted, port_estimates, truth, labels: dict[str, list] | None = None,
                      min_count: int = 3) -> PairedReport:
    """Metrics of model predictions and port estimates over the same calls.

    `labels` maps a side ('U'/'L') to the per-call cargo type (None = no
    operation on that side).  Per-type rows need at least `min_count` calls;
    the Combined row of a side covers every labelled call.
    """
    pred = np.asarray(predicted, dtype=float)
    port = np.asarray(port_estimates, dtype=float)
    y    = np.asarray(truth, dtype=float)
    if not (len(pred) == len(port) == len(y)):
        raise EvaluationError(
            f'length mismatch: {len(pred)} predictions, {len(port)} port estimates, {len(y)} truths')

    def _row(side, label, kind, idx):
        idx = np.asarray(idx, dtype=int)
        return MetricsRow(side=side, label=label, kind=kind, n=len(idx), metrics={
            MODEL_SOURCE: _metrics_or_empty(y[idx], pred[idx]),
            PORT_SOURCE:  _metrics_or_empty(y[idx], port[idx]),
        })

    rows = []
    if not labels:
        rows.append(_row(None, 'Combined', 'combined', range(len(y))))
    for side, side_labels in (labels or {}).items():
        if len(side_labels) != len(y):
            raise EvaluationError(f'side {side}: {len(side_labels)} labels for {len(y)} calls')
        present = [i for i, label in enumerate(side_labels) if label not in (None, NONE_LABEL)]
        counts = Counter(str(side_labels[i]) for i in present)
        for label, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if count >= min_count:
                rows.append(_row(side, label, 'type',
                                 [i for i in present if str(side_labels[i]) == label]))
        rows.append(_row(side, f'Combined ({side})', 'combined', present))
    return PairedReport(sources=[MODEL_SOURCE, PORT_SOURCE], min_count=min_count, rows=rows)


def _field(record, name):
    return record.get(name) if isinstance(record, dict) else getattr(record, name, None)


def live_comparison(records, calls: Dataset, min_count: int = 3) -> PairedReport:
    """Join logged predictions with closed calls on call_id (latest record wins)."""
    latest = {}
    for rec in sorted(records, key=lambda r: (_field(r, 'created_at'), _field(r, 'id') or 0)):
        if _field(rec, 'call_id'):
            latest[_field(rec, 'call_id')] = rec

    by_id = calls.by_id()
    pred, port, truth, unload, load = [], [], [], [], []
    for call_id in sorted(latest):
        rec = latest[call_id]
        call = by_id.get(call_id)
        if call is None or _field(rec, 'port_estimate_hours') is None:
            continue
        try:
            actual = turnaround_hours(call)
        except OpenCallError:
            continue
        pred.append(_field(rec, 'predicted_hours'))
        port.append(_field(rec, 'port_estimate_hours'))
        truth.append(actual)
        unload.append(call.unload.cargo_type if call.unload else None)
        load.append(call.load.cargo_type if call.load else None)

    if not truth:
        raise EvaluationError('no logged prediction with a port estimate matches a closed call')
    logger.info('Live comparison over %d calls', len(truth))
    return compare_with_port(pred, port, truth, labels={'U': unload, 'L': load},
                             min_count=min_count)
