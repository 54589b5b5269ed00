"""
linreg.py — Ridge linear regression baseline on the same FeatureMatrix.

Numeric and boolean columns are z-scored (missing values take the training
mean, zero-variance columns are dropped).  Categorical columns are one-hot
encoded with an explicit '__other__' bucket that catches labels unseen at
training time.  Weights minimise ‖y − Xw − b‖² + λ‖w‖², solved by least
squares on the centred, ridge-augmented design.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from errors import DesignMatrixError, EmptyDatasetError, SchemaMismatchError
from features import CATEGORICAL, FeatureMatrix, FeatureSchema
from gbdt import MIN_PREDICTION_HOURS, category_key, check_schema, row_values
from modelfile import LINEAR_FORMAT, read_model_file, version_tag, write_model_file

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6
OTHER_LABEL   = '__other__'


@dataclass(frozen=True, eq=False)
class LinearModel:
    schema:    FeatureSchema
    numeric:   dict[str, tuple[float, float]]   # kept column → (mean, std)
    vocab:     dict[str, tuple[str, ...]]       # categorical column → one-hot labels
    weights:   np.ndarray
    intercept: float
    ridge:     float

    @property
    def design_columns(self) -> list[str]:
        names = []
        for col in self.schema.columns:
            if col.kind == CATEGORICAL:
                names += [f'{col.name}={c}' for c in self.vocab[col.name]]
                names.append(f'{col.name}={OTHER_LABEL}')
            elif col.name in self.numeric:
                names.append(col.name)
        return names

    def design(self, rows) -> np.ndarray:
        """Expanded, standardised design matrix for validated rows."""
        blocks = []
        for j, col in enumerate(self.schema.columns):
            values = [row[j] for row in rows]
            if col.kind == CATEGORICAL:
                blocks.append(_one_hot(values, self.vocab[col.name]))
            elif col.name in self.numeric:
                mean, std = self.numeric[col.name]
                x = _as_float(values, col.name)
                x = np.where(np.isnan(x), mean, x)
                blocks.append(((x - mean) / std)[:, None])
        return np.hstack(blocks) if blocks else np.zeros((len(rows), 0))

    def coefficients(self) -> tuple[dict[str, float], float]:
        """Weights of numeric columns on their original scale, and the matching intercept."""
        slopes, intercept = {}, self.intercept
        for name, w in zip(self.design_columns, self.weights):
            if name in self.numeric:
                mean, std = self.numeric[name]
                slopes[name] = float(w / std)
                intercept -= float(w * mean / std)
        return slopes, intercept

    def to_payload(self) -> dict:
        return {
            'kind':      'linear',
            'schema':    self.schema.to_dict(),
            'numeric':   {k: list(v) for k, v in self.numeric.items()},
            'vocab':     {k: list(v) for k, v in self.vocab.items()},
            'weights':   [float(w) for w in self.weights],
            'intercept': self.intercept,
            'ridge':     self.ridge,
        }

    @classmethod
    def from_payload(cls, p: dict) -> 'LinearModel':
        return cls(
            schema    = FeatureSchema.from_dict(p['schema']),
            numeric   = {k: (float(m), float(s)) for k, (m, s) in p['numeric'].items()},
            vocab     = {k: tuple(v) for k, v in p['vocab'].items()},
            weights   = np.asarray(p['weights'], dtype=float),
            intercept = p['intercept'],
            ridge     = p['ridge'],
        )

    @cached_property
    def version(self) -> str:
        # the model is frozen, so the payload hash is computed once
        return version_tag(self.to_payload())


def _as_float(values, column: str) -> np.ndarray:
    try:
        return np.array([np.nan if v is None else float(v) for v in values], dtype=float)
    except (TypeError, ValueError):
        raise SchemaMismatchError(column, 'expected numeric values') from None


def _one_hot(values, labels: tuple[str, ...]) -> np.ndarray:
    index = {label: k for k, label in enumerate(labels)}
    block = np.zeros((len(values), len(labels) + 1))
    for i, v in enumerate(values):
        block[i, index.get(category_key(v), len(labels))] = 1.0
    return block


def fit_linear(matrix: FeatureMatrix, ridge: float = DEFAULT_RIDGE) -> LinearModel:
    if ridge < 0:
        raise ValueError('ridge must be >= 0')
    if matrix.n_rows < 2:
        raise EmptyDatasetError('linear baseline needs at least 2 rows')

    numeric, vocab = {}, {}
    for col in matrix.schema.columns:
        values = matrix.column(col.name)
        if col.kind == CATEGORICAL:
            keys = [category_key(v) for v in values]
            labels = sorted(set(keys))
            # A label present in every row is a constant column.
            vocab[col.name] = tuple(c for c in labels if keys.count(c) < len(keys))
        else:
            x = _as_float(values, col.name)
            present = x[~np.isnan(x)]
            if len(present) == 0:
                continue
            std = float(present.std())
            if std > 0:
                numeric[col.name] = (float(present.mean()), std)

    if not numeric and not any(vocab.values()):
        raise DesignMatrixError('every feature column is constant; nothing to fit')

    shell = LinearModel(matrix.schema, numeric, vocab, np.zeros(0), 0.0, ridge)
    X = shell.design(matrix.rows)
    y = matrix.target
    x_mean, y_mean = X.mean(axis=0), float(y.mean())
    Xc, yc = X - x_mean, y - y_mean
    if ridge > 0:
        Xc = np.vstack([Xc, np.sqrt(ridge) * np.eye(X.shape[1])])
        yc = np.concatenate([yc, np.zeros(X.shape[1])])
    weights, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
    intercept = y_mean - float(x_mean @ weights)

    logger.info('Fitted linear baseline: %d rows, %d design columns (ridge=%g)',
                matrix.n_rows, X.shape[1], ridge)
    return LinearModel(matrix.schema, numeric, vocab, weights, intercept, ridge)


def _raw(model: LinearModel, rows) -> np.ndarray:
    return model.design(rows) @ model.weights + model.intercept


def predict_linear(model: LinearModel, row) -> float:
    values = row_values(model.schema, row)
    return float(max(_raw(model, [values])[0], MIN_PREDICTION_HOURS))


def predict_linear_matrix(model: LinearModel, matrix: FeatureMatrix) -> np.ndarray:
    check_schema(model.schema, matrix.schema)
    return np.maximum(_raw(model, matrix.rows), MIN_PREDICTION_HOURS)


def save_linear(model: LinearModel, path) -> str:
    write_model_file(path, LINEAR_FORMAT, model.to_payload())
    return model.version


def load_linear(path) -> LinearModel:
    payload, _ = read_model_file(path, LINEAR_FORMAT)
    return LinearModel.from_payload(payload)
