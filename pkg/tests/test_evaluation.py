"""
tests/test_evaluation.py — Metrics, leave-one-year-out folds, reports, grid search.

Covers:
  • compute_metrics
      – [2,4] vs [3,3] → MAE 1, RMSE 1, MAPE 37.5; single point; perfect fit
      – agreement with a direct numpy re-computation on random samples
      – empty / mismatched input → EvaluationError
  • leave_one_year_out: 11 years → 11 folds partitioning the rows, 2 years → 2
  • Leakage: a poisoned year never reaches its own out-of-fold predictions
  • cross_validate
      – perfect oracle → every metric 0
      – mean model "All cargo types" MAE equals a hand-pooled computation
      – Top-K rows, per-fold results, unseen-type warnings
      – same result for n_jobs 1 and 2
  • grid_search: single point, more trees win on nonlinear data
  • GBDT beats the linear baseline on a type × tonnage interaction in ≥ 95 of
    100 seeded runs; per-type MAPE follows the generator's noise ordering
  • compare_with_port / live_comparison
"""
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from errors import EvaluationError
from evaluation import (
    compare_with_port,
    compute_metrics,
    cross_validate,
    fold_seeds,
    gbdt_factory,
    grid_search,
    leave_one_year_out,
    linear_factory,
    live_comparison,
    mean_factory,
    out_of_fold_predictions,
)
from features import HolidayCalendar, assemble_matrix
from schemas import CVConfig, CargoProfile, GridSpec, TrainConfig
from synthetic import demo_spec, synthesize_dataset
from tests.conftest import T0, make_call, make_dataset, op


@pytest.fixture(scope="module")
def small_matrix():
    dataset = synthesize_dataset(demo_spec(first_year=2016, last_year=2018,
                                           calls_per_year=30), seed=11)
    return assemble_matrix(dataset, HolidayCalendar())


def _oracle_factory(train_matrix, seed):
    return lambda m: m.target.copy()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class TestMetrics:

    def test_hand_example(self):
        m = compute_metrics([2.0, 4.0], [3.0, 3.0])
        assert m.n == 2
        assert m.mae == pytest.approx(1.0)
        assert m.rmse == pytest.approx(1.0)
        assert m.mape == pytest.approx(37.5)

    def test_single_point(self):
        m = compute_metrics([10.0], [8.0])
        assert (m.mae, m.rmse) == (pytest.approx(2.0), pytest.approx(2.0))
        assert m.mape == pytest.approx(20.0)

    def test_perfect_prediction(self):
        m = compute_metrics([5.0, 50.0, 500.0], [5.0, 50.0, 500.0])
        assert (m.mae, m.rmse, m.mape) == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_formulas(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.uniform(1, 100, size=int(rng.integers(1, 50)))
        p = y + rng.normal(0, 10, size=len(y))
        m = compute_metrics(y, p)
        assert m.mae == pytest.approx(np.mean(np.abs(y - p)), rel=1e-12)
        assert m.rmse == pytest.approx(np.sqrt(np.mean((y - p) ** 2)), rel=1e-12)
        assert m.mape == pytest.approx(100 * np.mean(np.abs(y - p) / y), rel=1e-12)
        assert m.rmse >= m.mae >= 0

    def test_empty_and_mismatched(self):
        with pytest.raises(EvaluationError, match="empty"):
            compute_metrics([], [])
        with pytest.raises(EvaluationError, match="length mismatch"):
            compute_metrics([1.0, 2.0], [1.0])


# ---------------------------------------------------------------------------
# Folds and leakage
# ---------------------------------------------------------------------------


def test_eleven_years_eleven_folds(demo_matrix):
    folds = leave_one_year_out(demo_matrix)
    assert [f.year for f in folds] == list(range(2008, 2019))
    tested = np.concatenate([f.test for f in folds])
    assert sorted(tested.tolist()) == list(range(demo_matrix.n_rows))
    for fold in folds:
        assert set(demo_matrix.years[fold.test]) == {fold.year}
        assert fold.year not in set(demo_matrix.years[fold.train])
        assert len(fold.train) + len(fold.test) == demo_matrix.n_rows


def test_two_years_two_folds(small_matrix):
    matrix = small_matrix.subset(np.flatnonzero(small_matrix.years != 2018))
    folds = leave_one_year_out(matrix)
    assert [f.year for f in folds] == [2016, 2017]
    assert set(matrix.years[folds[0].train]) == {2017}


def test_single_year_rejected(small_matrix):
    matrix = small_matrix.subset(np.flatnonzero(small_matrix.years == 2017))
    with pytest.raises(EvaluationError, match="at least 2"):
        leave_one_year_out(matrix)


def test_poisoned_year_never_leaks(demo_matrix):
    sentinel = 1e9
    for year in range(2008, 2019):
        target = demo_matrix.target.copy()
        rows = demo_matrix.years == year
        target[rows] = sentinel
        pooled, _ = out_of_fold_predictions(demo_matrix.with_target(target),
                                            {"mean": mean_factory()})
        assert np.all(pooled["mean"][rows] < 1e3)
        assert np.all(pooled["mean"][~rows] > 1e7)


def test_training_sets_exclude_test_calls(small_matrix):
    seen = []

    def recording_factory(train_matrix, seed):
        train_ids = set(train_matrix.call_ids)

        def predictor(test_matrix):
            seen.append((train_ids, set(test_matrix.call_ids), seed))
            return np.zeros(test_matrix.n_rows) + 10.0
        return predictor

    out_of_fold_predictions(small_matrix, {"rec": recording_factory}, CVConfig(seed=4))
    assert len(seen) == 3
    for train_ids, test_ids, _ in seen:
        assert not train_ids & test_ids
    assert [s for _, _, s in seen] == fold_seeds(4, 3)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def test_perfect_oracle_scores_zero(demo_matrix):
    report = cross_validate(demo_matrix, {"oracle": _oracle_factory})
    for row in report.rows:
        metrics = row.metrics["oracle"]
        assert (metrics.mae, metrics.rmse, metrics.mape) == (0.0, 0.0, 0.0)
    assert report.overall["oracle"].mae == 0.0


def test_mean_model_matches_hand_pooling(demo_matrix):
    report = cross_validate(demo_matrix, {"mean": mean_factory()})
    years, y = demo_matrix.years, demo_matrix.target
    pred = np.array([y[years != yr].mean() for yr in years])
    unloading = np.array([c != "NONE" for c in demo_matrix.column("cargo_type_u")])
    expected = np.mean(np.abs(y[unloading] - pred[unloading]))
    row = report.row("U", "All cargo types (U)")
    assert row.metrics["mean"].mae == pytest.approx(expected, abs=1e-9)
    assert row.n == int(unloading.sum())


def test_report_layout(demo_matrix):
    report = cross_validate(demo_matrix, {"mean": mean_factory(), "linear": linear_factory()},
                            CVConfig(top_k=2))
    assert report.models == ["mean", "linear"]
    type_rows = report.side_rows("U")
    assert len(type_rows) == 2
    assert type_rows[0].n >= type_rows[1].n
    top = report.side_rows("U", "top")[0]
    assert top.n == sum(r.n for r in type_rows)
    assert top.label == "Top 2 cargo types (U)"
    # WHEAT is only ever loaded in the demo data.
    assert "WHEAT" not in {r.label for r in report.side_rows("U")}
    assert [f.year for f in report.folds] == list(range(2008, 2019))
    assert sum(f.n_test for f in report.folds) == demo_matrix.n_rows


def test_unseen_cargo_type_warns():
    calls = [make_call(f"A{i}", arrival=T0 + timedelta(days=i), unload=op("WHEAT"))
             for i in range(5)]
    calls += [make_call(f"B{i}", arrival=T0 + timedelta(days=400 + i),
                        unload=op("WHEAT" if i else "BUTADIENE")) for i in range(5)]
    matrix = assemble_matrix(make_dataset(calls), HolidayCalendar())
    report = cross_validate(matrix, {"mean": mean_factory()})
    assert len(report.warnings) == 1
    assert "BUTADIENE" in report.warnings[0]
    assert "2016" in report.warnings[0]


def test_parallel_folds_match_serial(small_matrix):
    factory = gbdt_factory(TrainConfig(n_trees=10, max_depth=3))
    serial = cross_validate(small_matrix, {"gbdt": factory}, CVConfig(n_jobs=1))
    parallel = cross_validate(small_matrix, {"gbdt": factory}, CVConfig(n_jobs=2))
    assert serial.model_dump() == parallel.model_dump()


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def test_single_point_grid(small_matrix):
    grid = GridSpec(base=TrainConfig(n_trees=5, max_depth=2), axes={"learning_rate": [0.2]})
    best, board = grid_search(small_matrix, grid)
    assert best == TrainConfig(n_trees=5, max_depth=2, learning_rate=0.2)
    assert len(board) == 1 and board[0].rank == 1


def test_more_trees_win(small_matrix):
    grid = GridSpec(base=TrainConfig(max_depth=3, learning_rate=0.3, min_samples_leaf=2),
                    axes={"n_trees": [1, 40]})
    best, board = grid_search(small_matrix, grid)
    assert best.n_trees == 40
    assert board[0].overall.mae < board[1].overall.mae


def test_grid_rejects_unknown_axis():
    with pytest.raises(ValueError, match="unknown TrainConfig fields"):
        GridSpec(axes={"n_estimators": [100]})


# ---------------------------------------------------------------------------
# Patterns on synthetic data
# ---------------------------------------------------------------------------


def _u_only_matrix(profiles, seed, calls_per_year=80):
    spec = demo_spec(cargo_types=profiles, first_year=2016, last_year=2018,
                     calls_per_year=calls_per_year, weekday_offsets_hours=[0.0] * 7,
                     berth_offsets_hours={}, dual_operation_share=0.0)
    return assemble_matrix(synthesize_dataset(spec, seed=seed), HolidayCalendar())


INTERACTION_PROFILES = [
    # A slows with tonnage, B does not: one shared linear slope cannot fit both.
    CargoProfile(name="A", base_hours=10.0, hours_per_tonne=0.01, noise_hours=1.0,
                 tonnage_min=1000, tonnage_max=9000, sides="U"),
    CargoProfile(name="B", base_hours=60.0, noise_hours=1.0,
                 tonnage_min=1000, tonnage_max=9000, sides="U"),
]


@pytest.mark.slow
def test_gbdt_beats_linear_on_type_tonnage_interaction():
    factories = {
        "gbdt": gbdt_factory(TrainConfig(n_trees=30, learning_rate=0.3, max_depth=3,
                                         min_samples_leaf=3)),
        "linear": linear_factory(),
    }
    wins = 0
    for seed in range(100):
        report = cross_validate(_u_only_matrix(INTERACTION_PROFILES, seed, calls_per_year=60),
                                factories, CVConfig(seed=seed))
        wins += report.overall["gbdt"].mae < report.overall["linear"].mae
    assert wins >= 95


@pytest.mark.slow
def test_per_type_mape_follows_generator_noise():
    matrix = _u_only_matrix([
        CargoProfile(name=name, base_hours=30.0, noise_hours=noise, sides="U")
        for name, noise in (("CALM", 1.0), ("BUSY", 5.0), ("ROUGH", 12.0))
    ], seed=4)
    report = cross_validate(matrix, {"gbdt": gbdt_factory(TrainConfig(n_trees=20, max_depth=2))})
    mape = {name: report.row("U", name).metrics["gbdt"].mape for name in ("CALM", "BUSY", "ROUGH")}
    assert mape["CALM"] < mape["BUSY"] < mape["ROUGH"]


# ---------------------------------------------------------------------------
# Comparison with port estimates
# ---------------------------------------------------------------------------


class TestCompareWithPort:

    def test_identical_sources(self):
        truth = [10.0, 20.0, 30.0]
        report = compare_with_port([12.0, 18.0, 35.0], [12.0, 18.0, 35.0], truth)
        combined = report.rows[0]
        assert combined.metrics["model"] == combined.metrics["port"]

    def test_half_the_error(self):
        truth = np.array([40.0, 50.0, 60.0, 70.0])
        error = np.array([2.0, -4.0, 6.0, -8.0])
        report = compare_with_port(truth + error, truth + 2 * error, truth)
        combined = report.rows[0]
        assert combined.metrics["model"].mae * 2 == combined.metrics["port"].mae

    def test_per_side_rows_respect_min_count(self):
        truth = [10.0] * 5
        labels = {"U": ["WHEAT", "WHEAT", "WHEAT", "CRUDE OIL", None],
                  "L": [None] * 5}
        report = compare_with_port([11.0] * 5, [14.0] * 5, truth, labels, min_count=3)
        u_rows = [r for r in report.rows if r.side == "U"]
        assert [r.label for r in u_rows] == ["WHEAT", "Combined (U)"]
        assert u_rows[1].n == 4
        l_combined = [r for r in report.rows if r.side == "L"][0]
        assert l_combined.n == 0
        assert l_combined.metrics["model"].mae is None

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            compare_with_port([1.0], [1.0, 2.0], [1.0])


def test_live_comparison_latest_record_wins():
    stamp = datetime(2024, 5, 1, tzinfo=timezone.utc)
    calls = make_dataset([
        make_call("P1", hours=30.0, unload=op("WHEAT")),
        make_call("P2", hours=20.0, unload=op("WHEAT"), arrival=T0 + timedelta(days=2)),
        make_call("P3", departure=None, arrival=T0 + timedelta(days=3)),
    ])
    records = [
        {"id": 1, "call_id": "P1", "predicted_hours": 10.0, "port_estimate_hours": 40.0,
         "created_at": stamp},
        {"id": 2, "call_id": "P1", "predicted_hours": 28.0, "port_estimate_hours": 36.0,
         "created_at": stamp + timedelta(hours=1)},
        {"id": 3, "call_id": "P2", "predicted_hours": 22.0, "port_estimate_hours": 25.0,
         "created_at": stamp},
        {"id": 4, "call_id": "P3", "predicted_hours": 22.0, "port_estimate_hours": 25.0,
         "created_at": stamp},
        {"id": 5, "call_id": "P9", "predicted_hours": 22.0, "port_estimate_hours": None,
         "created_at": stamp},
    ]
    report = live_comparison(records, calls, min_count=1)
    combined = next(r for r in report.rows if r.label == "Combined (U)")
    assert combined.n == 2
    assert combined.metrics["model"].mae == pytest.approx(2.0)
    assert combined.metrics["port"].mae == pytest.approx(5.5)


def test_live_comparison_without_matches():
    with pytest.raises(EvaluationError, match="no logged prediction"):
        live_comparison([], make_dataset([make_call()]))
