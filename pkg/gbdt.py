"""
gbdt.py — Gradient-boosted regression trees with ordered target statistics.

Squared-error boosting:

    F0 = mean(y)
    F_m = F_{m-1} + learning_rate · tree_m(x),  tree_m fit on y − F_{m-1}(x)

Categorical columns are turned into numbers once per training run with
ordered target statistics (OTS): a row's training-time encoding only uses
targets of rows visited before it in a single seeded permutation, so it never
depends on its own target.  At inference the full-data statistic is used and
unseen categories fall back to the prior.

Trees are grown by exact greedy search over midpoints of sorted distinct
values, maximising the SSE reduction.  Missing numeric values follow the child
with more non-missing rows (tie → left) and count on that side.

Public API:
    ots_encode(values, targets, permutation, prior, smoothing)
    fit_tree(X, residuals, config)         → RegressionTree
    train(matrix, config)                  → GbdtModel
    predict(model, row)                    → hours (floored at 1.0)
    predict_matrix(model, matrix)          → np.ndarray
    feature_importance(model)              → {feature: percent}
    save_model(model, path) / load_model(path)
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from errors import EmptyDatasetError, SchemaMismatchError
from features import CATEGORICAL, NONE_LABEL, FeatureMatrix, FeatureSchema
from modelfile import GBDT_FORMAT, read_model_file, version_tag, write_model_file
from schemas import TrainConfig

logger = logging.getLogger(__name__)

MIN_PREDICTION_HOURS = 1.0
# Relative tolerance for "equal" gains and for "no real improvement".
GAIN_RTOL = 1e-9
SPLIT_EPS = 1e-10


# ── Ordered target statistics ─────────────────────────────────────────────────

def category_key(value) -> str:
    """Categories are keyed by their string form; absent values share NONE."""
    return NONE_LABEL if value is None else str(value)


def ots_encode(values, targets, permutation, prior: float,
               smoothing: float) -> tuple[np.ndarray, dict[str, tuple[float, int]]]:
    """Training-time OTS encodings plus the full-data (sum, count) per category.

    `permutation` lists row indices in visiting order.  Row i is encoded as
    (Σ earlier same-category targets + a·P) / (earlier same-category count + a).
    """
    keys = [category_key(v) for v in values]
    y    = np.asarray(targets, dtype=float)
    perm = np.asarray(permutation, dtype=int)
    n    = len(keys)
    if n == 0:
        raise EmptyDatasetError('cannot encode an empty column')
    if len(y) != n:
        raise ValueError(f'column has {n} values but {len(y)} targets')
    if len(perm) != n or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError('permutation must be a bijection on row indices')

    visit = pd.DataFrame({'cat': [keys[i] for i in perm], 'y': y[perm]})
    grouped  = visit.groupby('cat', sort=False)['y']
    previous = grouped.shift(1, fill_value=0.0)
    prev_sum = previous.groupby(visit['cat'], sort=False).cumsum()
    prev_cnt = grouped.cumcount()

    encoded = np.empty(n, dtype=float)
    encoded[perm] = ((prev_sum + smoothing * prior) / (prev_cnt + smoothing)).to_numpy()

    totals = visit.groupby('cat', sort=True)['y'].agg(['sum', 'count'])
    stats  = {str(cat): (float(row['sum']), int(row['count'])) for cat, row in totals.iterrows()}
    return encoded, stats


@dataclass(frozen=True)
class OtsEncoder:
    """Inference-time OTS state for every categorical column."""
    prior:       float
    smoothing:   float
    permutation: tuple[int, ...]
    stats:       dict[str, dict[str, tuple[float, int]]]

    def encode(self, column: str, value) -> float:
        total, count = self.stats[column].get(category_key(value), (0.0, 0))
        if count == 0:
            return self.prior
        return (total + self.smoothing * self.prior) / (count + self.smoothing)

    def to_dict(self) -> dict:
        return {
            'prior':       self.prior,
            'smoothing':   self.smoothing,
            'permutation': list(self.permutation),
            'stats':       {col: {k: [s, c] for k, (s, c) in table.items()}
                            for col, table in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> 'OtsEncoder':
        return cls(
            prior       = d['prior'],
            smoothing   = d['smoothing'],
            permutation = tuple(d['permutation']),
            stats       = {col: {k: (float(s), int(c)) for k, (s, c) in table.items()}
                           for col, table in d['stats'].items()},
        )


# ---------------------------------------------------------------------------
# Regression tree
# ---------------------------------------------------------------------------

@dataclass
class RegressionTree:
    """Flat node arrays; node 0 is the root, feature == -1 marks a leaf."""
    feature:      list[int]   = field(default_factory=list)
    threshold:    list[float] = field(default_factory=list)
    missing_left: list[bool]  = field(default_factory=list)
    left:         list[int]   = field(default_factory=list)
    right:        list[int]   = field(default_factory=list)
    value:        list[float] = field(default_factory=list)
    gain:         list[float] = field(default_factory=list)
    n_samples:    list[int]   = field(default_factory=list)

    def _add(self, value: float, n: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.missing_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.gain.append(0.0)
        self.n_samples.append(n)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row of X (NaN = missing)."""
        if len(X) == 1:
            return np.array([self._leaf_value(X[0])])
        feature   = np.asarray(self.feature, dtype=int)
        threshold = np.asarray(self.threshold, dtype=float)
        miss_left = np.asarray(self.missing_left, dtype=bool)
        left      = np.asarray(self.left, dtype=int)
        right     = np.asarray(self.right, dtype=int)
        node = np.zeros(len(X), dtype=int)
        while True:
            active = np.flatnonzero(feature[node] >= 0)
            if len(active) == 0:
                break
            at = node[active]
            x  = X[active, feature[at]]
            go_left = np.where(np.isnan(x), miss_left[at], x <= threshold[at])
            node[active] = np.where(go_left, left[at], right[at])
        return np.asarray(self.value, dtype=float)[node]

    def _leaf_value(self, x: np.ndarray) -> float:
        # single-row walk over the node lists; same routing as apply()
        node = 0
        while self.feature[node] >= 0:
            v = x[self.feature[node]]
            if np.isnan(v):
                go_left = self.missing_left[node]
            else:
                go_left = v <= self.threshold[node]
            node = self.left[node] if go_left else self.right[node]
        return float(self.value[node])

    def to_dict(self) -> dict:
        return {
            'feature': self.feature, 'threshold': self.threshold,
            'missing_left': self.missing_left, 'left': self.left, 'right': self.right,
            'value': self.value, 'gain': self.gain, 'n_samples': self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> 'RegressionTree':
        return cls(**{k: list(d[k]) for k in (
            'feature', 'threshold', 'missing_left', 'left', 'right',
            'value', 'gain', 'n_samples')})


@dataclass(frozen=True)
class Split:
    feature:      int
    threshold:    float
    gain:         float
    missing_left: bool


@dataclass(frozen=True)
class Candidates:
    """Admissible splits of one node as parallel arrays, ordered by (feature, threshold)."""
    feature:      np.ndarray
    threshold:    np.ndarray
    gain:         np.ndarray
    missing_left: np.ndarray

    def __len__(self) -> int:
        return len(self.gain)


def presort(X: np.ndarray) -> list[np.ndarray]:
    """Per feature: indices of non-missing rows in ascending value order."""
    orders = []
    for j in range(X.shape[1]):
        present = np.flatnonzero(~np.isnan(X[:, j]))
        orders.append(present[np.argsort(X[present, j], kind='stable')])
    return orders


def _node_candidates(X: np.ndarray, r: np.ndarray, idx: np.ndarray,
                     orders: list[np.ndarray], min_leaf: int) -> Candidates:
    n = len(idx)
    total = float(r[idx].sum())
    parent_term = total * total / n
    member = np.zeros(len(r), dtype=bool)
    member[idx] = True

    parts = []
    for j, order in enumerate(orders):
        rows = order[member[order]]
        n_p = len(rows)
        if n_p < 2:
            continue
        xs = X[rows, j]
        k = np.flatnonzero(xs[1:] > xs[:-1]) + 1
        if len(k) == 0:
            continue
        n_miss = n - n_p
        s_miss = float(r[idx[np.isnan(X[idx, j])]].sum()) if n_miss else 0.0
        cs = np.cumsum(r[rows])

        miss_left = k >= n_p - k
        n_left  = k + np.where(miss_left, n_miss, 0)
        n_right = n - n_left
        s_left  = cs[k - 1] + np.where(miss_left, s_miss, 0.0)
        s_right = total - s_left
        ok = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not ok.any():
            continue
        gain = s_left[ok] ** 2 / n_left[ok] + s_right[ok] ** 2 / n_right[ok] - parent_term
        lo, hi = xs[k - 1][ok], xs[k][ok]
        thr = (lo + hi) / 2.0
        thr = np.where(thr >= hi, lo, thr)
        parts.append((np.full(len(thr), j), thr, gain, miss_left[ok]))

    if not parts:
        empty = np.zeros(0)
        return Candidates(empty.astype(int), empty, empty, empty.astype(bool))
    return Candidates(*(np.concatenate(arrays) for arrays in zip(*parts)))


def candidate_splits(X, residuals, min_leaf: int = 1) -> Candidates:
    """All admissible root splits of (X, residuals)."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    return _node_candidates(X, r, np.arange(len(r)), presort(X), min_leaf)


def best_split(candidates: Candidates) -> Split | None:
    """Highest gain; near-ties (GAIN_RTOL) go to the lowest feature, then threshold."""
    if len(candidates) == 0:
        return None
    top = float(candidates.gain.max())
    i = int(np.flatnonzero(candidates.gain >= top - GAIN_RTOL * abs(top))[0])
    return Split(
        feature      = int(candidates.feature[i]),
        threshold    = float(candidates.threshold[i]),
        gain         = float(candidates.gain[i]),
        missing_left = bool(candidates.missing_left[i]),
    )


def fit_tree(X: np.ndarray, residuals, config: TrainConfig,
             orders: list[np.ndarray] | None = None) -> RegressionTree:
    """Grow one tree on encoded numeric rows.  Degenerate input gives a single leaf.

    `orders` is the presort() of X; train() computes it once for all trees.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    orders = presort(X) if orders is None else orders
    tree = RegressionTree()
    lam, min_leaf = config.l2_leaf_reg, config.min_samples_leaf

    def grow(idx: np.ndarray, depth: int) -> int:
        rr = r[idx]
        node = tree._add(float(rr.sum() / (len(idx) + lam)), len(idx))
        if depth >= config.max_depth or len(idx) < 2 * min_leaf:
            return node
        split = best_split(_node_candidates(X, r, idx, orders, min_leaf))
        if split is None or split.gain <= SPLIT_EPS * float(np.dot(rr, rr)):
            return node
        x = X[idx, split.feature]
        go_left = np.where(np.isnan(x), split.missing_left, x <= split.threshold)
        tree.feature[node]      = split.feature
        tree.threshold[node]    = split.threshold
        tree.missing_left[node] = split.missing_left
        tree.gain[node]         = max(split.gain, 0.0)
        tree.left[node]  = grow(idx[go_left], depth + 1)
        tree.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return tree


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GbdtModel:
    schema:        FeatureSchema
    base_score:    float
    trees:         tuple[RegressionTree, ...]
    encoder:       OtsEncoder
    config:        TrainConfig
    feature_gains: dict[str, float]
    train_rmse:    tuple[float, ...] = ()

    @property
    def learning_rate(self) -> float:
        return self.config.learning_rate

    def to_payload(self) -> dict:
        return {
            'kind':          'gbdt',
            'schema':        self.schema.to_dict(),
            'base_score':    self.base_score,
            'config':        self.config.model_dump(),
            'encoder':       self.encoder.to_dict(),
            'trees':         [t.to_dict() for t in self.trees],
            'feature_gains': self.feature_gains,
            'train_rmse':    list(self.train_rmse),
        }

    @classmethod
    def from_payload(cls, p: dict) -> 'GbdtModel':
        return cls(
            schema        = FeatureSchema.from_dict(p['schema']),
            base_score    = p['base_score'],
            trees         = tuple(RegressionTree.from_dict(t) for t in p['trees']),
            encoder       = OtsEncoder.from_dict(p['encoder']),
            config        = TrainConfig.model_validate(p['config']),
            feature_gains = dict(p['feature_gains']),
            train_rmse    = tuple(p.get('train_rmse', ())),
        )

    @cached_property
    def version(self) -> str:
        # the model is frozen, so the payload hash is computed once
        return version_tag(self.to_payload())


def _numeric(value, column: str) -> float:
    if value is None:
        return np.nan
    if isinstance(value, bool):
        return float(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SchemaMismatchError(column, f'expected a number, got {value!r}') from None


def check_schema(expected: FeatureSchema, actual: FeatureSchema) -> None:
    """Raise SchemaMismatchError naming the first column that differs."""
    for want, got in zip(expected.columns, actual.columns):
        if want.name != got.name:
            raise SchemaMismatchError(got.name, f'expected feature {want.name!r}')
        if want.kind != got.kind:
            raise SchemaMismatchError(got.name, f'expected kind {want.kind}, got {got.kind}')
    if len(expected) > len(actual):
        raise SchemaMismatchError(expected.columns[len(actual)].name, 'missing feature')
    if len(actual) > len(expected):
        raise SchemaMismatchError(actual.columns[len(expected)].name, 'unknown feature')


def row_values(schema: FeatureSchema, row) -> tuple:
    """Validate one row (mapping or sequence) against the schema."""
    if isinstance(row, dict):
        for name in row:
            if name not in schema.names:
                raise SchemaMismatchError(name, 'unknown feature')
        for name in schema.names:
            if name not in row:
                raise SchemaMismatchError(name, 'missing feature')
        return tuple(row[name] for name in schema.names)
    row = tuple(row)
    if len(row) != len(schema):
        raise SchemaMismatchError(
            schema.names[min(len(row), len(schema) - 1)],
            f'row has {len(row)} values, schema has {len(schema)}',
        )
    return row


def encode_rows(schema: FeatureSchema, encoder: OtsEncoder, rows) -> np.ndarray:
    """Numeric design matrix with inference-time OTS for categorical columns."""
    X = np.empty((len(rows), len(schema)), dtype=float)
    for j, col in enumerate(schema.columns):
        if col.kind == CATEGORICAL:
            X[:, j] = [encoder.encode(col.name, row[j]) for row in rows]
        else:
            X[:, j] = [_numeric(row[j], col.name) for row in rows]
    return X


def _raw_scores(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    scores = np.full(len(X), model.base_score, dtype=float)
    for tree in model.trees:
        scores += model.learning_rate * tree.apply(X)
    return scores


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _training_design(matrix: FeatureMatrix, permutation: np.ndarray, prior: float,
                     smoothing: float) -> tuple[np.ndarray, dict]:
    X = np.empty((matrix.n_rows, len(matrix.schema)), dtype=float)
    stats = {}
    for j, col in enumerate(matrix.schema.columns):
        values = matrix.column(col.name)
        if col.kind == CATEGORICAL:
            X[:, j], stats[col.name] = ots_encode(values, matrix.target, permutation,
                                                  prior, smoothing)
        else:
            X[:, j] = [_numeric(v, col.name) for v in values]
    return X, stats


def train(matrix: FeatureMatrix, config: TrainConfig | None = None) -> GbdtModel:
    config = config or TrainConfig()
    if matrix.n_rows == 0:
        raise EmptyDatasetError('cannot train on an empty matrix')
    y = matrix.target
    if not np.all(np.isfinite(y)):
        raise ValueError('target contains non-finite values')

    base = float(y.mean())
    permutation = np.random.default_rng(config.seed).permutation(matrix.n_rows)
    X, stats = _training_design(matrix, permutation, base, config.ots_smoothing)
    encoder = OtsEncoder(prior=base, smoothing=config.ots_smoothing,
                         permutation=tuple(int(i) for i in permutation), stats=stats)

    names  = matrix.schema.names
    gains  = np.zeros(len(names))
    scores = np.full(matrix.n_rows, base, dtype=float)
    rmse   = [float(np.sqrt(np.mean((y - scores) ** 2)))]
    trees  = []
    orders = presort(X)
    for m in range(config.n_trees):
        tree = fit_tree(X, y - scores, config, orders)
        scores += config.learning_rate * tree.apply(X)
        for f, g in zip(tree.feature, tree.gain):
            if f >= 0:
                gains[f] += g
        trees.append(tree)
        rmse.append(float(np.sqrt(np.mean((y - scores) ** 2))))
        if (m + 1) % 100 == 0:
            logger.debug('Tree %d/%d: train RMSE %.4f', m + 1, config.n_trees, rmse[-1])

    logger.info('Trained %d trees on %d rows (train RMSE %.3f -> %.3f)',
                len(trees), matrix.n_rows, rmse[0], rmse[-1])
    return GbdtModel(
        schema        = matrix.schema,
        base_score    = base,
        trees         = tuple(trees),
        encoder       = encoder,
        config        = config,
        feature_gains = {name: float(g) for name, g in zip(names, gains)},
        train_rmse    = tuple(rmse),
    )


# ---------------------------------------------------------------------------
# Prediction / importance / persistence
# ---------------------------------------------------------------------------

def predict(model: GbdtModel, row) -> float:
    """Turnaround hours for one feature row, floored at MIN_PREDICTION_HOURS."""
    X = encode_rows(model.schema, model.encoder, [row_values(model.schema, row)])
    return float(max(_raw_scores(model, X)[0], MIN_PREDICTION_HOURS))


def predict_matrix(model: GbdtModel, matrix: FeatureMatrix) -> np.ndarray:
    check_schema(model.schema, matrix.schema)
    X = encode_rows(model.schema, model.encoder, matrix.rows)
    return np.maximum(_raw_scores(model, X), MIN_PREDICTION_HOURS)


def feature_importance(model: GbdtModel) -> dict[str, float]:
    """Split-gain share per feature, summing to 100 (empty if no tree ever split)."""
    total = sum(model.feature_gains.values())
    if total <= 0:
        return {}
    return {name: 100.0 * model.feature_gains.get(name, 0.0) / total
            for name in model.schema.names}


def save_model(model: GbdtModel, path) -> str:
    write_model_file(path, GBDT_FORMAT, model.to_payload())
    return model.version


def load_model(path) -> GbdtModel:
    payload, _ = read_model_file(path, GBDT_FORMAT)
    model = GbdtModel.from_payload(payload)
    logger.info('Loaded model %s from %s (%d trees)', model.version, path, len(model.trees))
    return model
