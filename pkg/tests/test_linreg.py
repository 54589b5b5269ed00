"""
tests/test_linreg.py — Ridge linear baseline.

Covers:
  • y = 3x + 1 recovered exactly (slope and intercept on the original scale)
  • single categorical → per-category means
  • 3-row full-rank system equals the hand-solved normal equations
  • residuals orthogonal to every design column at ridge 0
  • mean row → mean target; missing numeric → column mean
  • unseen category → '__other__' bucket, finite prediction
  • constant-only matrix → DesignMatrixError; negative ridge rejected
  • save / load round trip; linear file rejected by the GBDT loader
"""
import numpy as np
import pytest

from errors import DesignMatrixError, ModelFileError
from features import BOOLEAN, CATEGORICAL, NUMERIC, Column, FeatureMatrix, FeatureSchema
from gbdt import load_model
from linreg import (
    OTHER_LABEL,
    fit_linear,
    load_linear,
    predict_linear,
    predict_linear_matrix,
    save_linear,
)


def _matrix(columns, rows, target):
    n = len(rows)
    return FeatureMatrix(
        schema   = FeatureSchema(columns=tuple(columns)),
        rows     = tuple(tuple(r) for r in rows),
        target   = np.asarray(target, dtype=float),
        call_ids = tuple(f"R{i}" for i in range(n)),
        years    = np.full(n, 2016),
    )


def _mixed_fixture(n=60, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(10, 3, n)
    x2 = rng.uniform(0, 500, n)
    flag = rng.integers(0, 2, n)
    cargo = rng.choice(["WHEAT", "BUTADIENE", "CRUDE OIL"], n)
    y = 2 * x1 + 0.05 * x2 + 7 * flag + rng.normal(0, 1, n) + 20
    rows = list(zip(x1, x2, flag.tolist(), cargo.tolist()))
    columns = [Column("x1", NUMERIC), Column("x2", NUMERIC),
               Column("holiday", BOOLEAN), Column("cargo", CATEGORICAL)]
    return _matrix(columns, rows, y)


# ---------------------------------------------------------------------------
# Exact fits
# ---------------------------------------------------------------------------


def test_recovers_slope_and_intercept():
    xs = np.linspace(0, 50, 40)
    model = fit_linear(_matrix([Column("x", NUMERIC)], [(x,) for x in xs], 3 * xs + 1),
                       ridge=0.0)
    slopes, intercept = model.coefficients()
    assert slopes["x"] == pytest.approx(3.0, abs=1e-6)
    assert intercept == pytest.approx(1.0, abs=1e-6)
    assert predict_linear(model, (xs[7],)) == pytest.approx(3 * xs[7] + 1, abs=1e-6)


def test_categorical_group_means():
    rows = [("A",), ("B",)] * 10
    target = [8.0, 19.0, 12.0, 21.0] * 5        # A → 10, B → 20
    model = fit_linear(_matrix([Column("cargo", CATEGORICAL)], rows, target), ridge=0.0)
    assert predict_linear(model, ("A",)) == pytest.approx(10.0, abs=1e-6)
    assert predict_linear(model, ("B",)) == pytest.approx(20.0, abs=1e-6)


def test_three_row_system_matches_normal_equations():
    rows = [(1.0, 2.0), (2.0, 1.0), (4.0, 5.0)]
    y = np.array([9.0, 8.0, 22.0])
    model = fit_linear(_matrix([Column("a", NUMERIC), Column("b", NUMERIC)], rows, y),
                       ridge=0.0)
    A = np.column_stack([np.ones(3), np.array(rows)])
    expected = np.linalg.solve(A.T @ A, A.T @ y)
    slopes, intercept = model.coefficients()
    assert intercept == pytest.approx(expected[0], abs=1e-6)
    assert slopes["a"] == pytest.approx(expected[1], abs=1e-6)
    assert slopes["b"] == pytest.approx(expected[2], abs=1e-6)


def test_residuals_orthogonal_to_design():
    matrix = _mixed_fixture()
    model = fit_linear(matrix, ridge=0.0)
    X = model.design(matrix.rows)
    residuals = matrix.target - (X @ model.weights + model.intercept)
    assert np.all(np.abs(X.T @ residuals) < 1e-6)
    assert abs(residuals.sum()) < 1e-6


def test_mean_row_predicts_mean_target():
    matrix = _mixed_fixture()
    numeric_only = _matrix(matrix.schema.columns[:2], [r[:2] for r in matrix.rows],
                           matrix.target)
    model = fit_linear(numeric_only)
    mean_row = tuple(float(np.mean(numeric_only.column(c))) for c in ("x1", "x2"))
    assert predict_linear(model, mean_row) == pytest.approx(matrix.target.mean(), abs=1e-6)


def test_missing_numeric_takes_mean():
    matrix = _mixed_fixture()
    model = fit_linear(matrix)
    mean_x1 = model.numeric["x1"][0]
    assert predict_linear(model, (None, 100.0, 0, "WHEAT")) == pytest.approx(
        predict_linear(model, (mean_x1, 100.0, 0, "WHEAT")))


# ---------------------------------------------------------------------------
# Categories and degenerate input
# ---------------------------------------------------------------------------


def test_unseen_category_goes_to_other_bucket():
    model = fit_linear(_mixed_fixture())
    assert f"cargo={OTHER_LABEL}" in model.design_columns
    value = predict_linear(model, (10.0, 100.0, 1, "SUNFLOWER BULK"))
    assert np.isfinite(value)


def test_constant_columns_raise():
    matrix = _matrix([Column("x", NUMERIC), Column("cargo", CATEGORICAL)],
                     [(5.0, "WHEAT")] * 4, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DesignMatrixError):
        fit_linear(matrix)


def test_negative_ridge_rejected():
    with pytest.raises(ValueError, match="ridge"):
        fit_linear(_mixed_fixture(), ridge=-1.0)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    matrix = _mixed_fixture()
    model = fit_linear(matrix)
    path = tmp_path / "baseline.linm"
    assert save_linear(model, path) == model.version
    loaded = load_linear(path)
    assert predict_linear_matrix(loaded, matrix).tobytes() == \
        predict_linear_matrix(model, matrix).tobytes()


def test_linear_file_is_not_a_gbdt_model(tmp_path):
    path = tmp_path / "baseline.linm"
    save_linear(fit_linear(_mixed_fixture()), path)
    with pytest.raises(ModelFileError, match="expected a 'gbtm' model"):
        load_model(path)
