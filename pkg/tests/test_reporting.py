"""
tests/test_reporting.py — Markdown and JSON rendering of reports.

Covers:
  • evaluation report — side sections, one metric column per model, folds,
    warnings; single-model tables use bare metric titles
  • paired report — MAE model / MAE port columns per side
  • leaderboard, feature importance ordering, cleaning summary
  • write_report — .md → Markdown, anything else → JSON
  • to_markdown on an unsupported object → TypeError
"""
import json

import pandas as pd
import pytest

from cleaning import apply_filters
from evaluation import (
    EvalReport,
    FoldResult,
    LeaderboardEntry,
    Metrics,
    MetricsRow,
    compare_with_port,
)
from reporting import (
    importance_frame,
    importance_markdown,
    leaderboard_markdown,
    to_json,
    to_markdown,
    write_report,
)
from schemas import CleaningRules, TrainConfig
from tests.conftest import make_call, make_dataset


def _m(n, mae, rmse=None, mape=None):
    return Metrics(n=n, mae=mae, rmse=rmse if rmse is not None else mae + 1, mape=mape or 10.0)


def _eval_report(models=("gbdt", "linear")):
    def metrics(base):
        return {m: _m(4, base + i) for i, m in enumerate(models)}
    rows = [
        MetricsRow(side="U", label="WHEAT", kind="type", n=4, metrics=metrics(12.5)),
        MetricsRow(side="U", label="Top 1 cargo types (U)", kind="top", n=4, metrics=metrics(12.5)),
        MetricsRow(side="L", label="MAIZE", kind="type", n=2, metrics=metrics(7.25)),
    ]
    return EvalReport(
        models=list(models), top_k=1, seed=0, rows=rows,
        overall={m: _m(6, 11.0 + i) for i, m in enumerate(models)},
        folds=[FoldResult(year=2016, n_train=40, n_test=6,
                          metrics={m: _m(6, 11.0 + i) for i, m in enumerate(models)})],
        warnings=["fold 2016: cargo type 'BUTADIENE' (U) unseen in training"],
    )


# ---------------------------------------------------------------------------
# Evaluation layouts
# ---------------------------------------------------------------------------


class TestEvalReportMarkdown:

    def test_sections_and_columns(self):
        text = to_markdown(_eval_report())
        assert "## Unloading (U)" in text
        assert "## Loading (L)" in text
        assert "MAE gbdt" in text and "MAE linear" in text
        assert "RMSE linear" in text
        assert "12.50" in text and "13.50" in text
        assert "Top 1 cargo types (U)" in text
        assert "## Folds" in text and "2016" in text
        assert "- fold 2016: cargo type 'BUTADIENE' (U) unseen in training" in text

    def test_single_model_uses_bare_titles(self):
        text = to_markdown(_eval_report(models=("gbdt",)))
        assert "MAE gbdt" not in text
        assert "MAPE %" in text

    def test_side_without_rows_is_omitted(self):
        report = _eval_report()
        report = report.model_copy(update={"rows": [r for r in report.rows if r.side == "U"]})
        assert "## Loading" not in to_markdown(report)


def test_paired_report_markdown():
    report = compare_with_port([10, 20, 30], [12, 25, 30], [11, 21, 31],
                               labels={"U": ["WHEAT"] * 3}, min_count=3)
    text = to_markdown(report)
    assert "## Side U" in text
    assert "MAE model" in text and "MAE port" in text
    assert "Combined (U)" in text
    assert "1.00" in text                      # model MAE over the three calls


def test_paired_report_without_labels_has_no_side_heading():
    text = to_markdown(compare_with_port([10], [12], [11]))
    assert "## Side" not in text
    assert "Combined" in text


def test_leaderboard_markdown():
    board = [
        LeaderboardEntry(rank=1, config=TrainConfig(n_trees=40), overall=_m(10, 3.25)),
        LeaderboardEntry(rank=2, config=TrainConfig(n_trees=1), overall=_m(10, 9.75)),
    ]
    text = leaderboard_markdown(board)
    assert text.startswith("# Grid search")
    assert "n_trees" in text and "learning_rate" in text
    assert text.index("3.25") < text.index("9.75")


# ---------------------------------------------------------------------------
# Training and cleaning summaries
# ---------------------------------------------------------------------------


def test_importance_sorted_descending_then_by_name():
    frame = importance_frame({"tonnage_u": 25.0, "berth_u": 25.0, "cargo_type_u": 50.0})
    assert frame["Feature"].tolist() == ["cargo_type_u", "berth_u", "tonnage_u"]
    assert "(sum = 100)" in importance_markdown({"cargo_type_u": 100.0})


def test_empty_importance_table():
    assert "_(no rows)_" in importance_markdown({})


def test_cleaning_markdown():
    dataset = make_dataset([make_call("C1"), make_call("OPEN", departure=None)])
    _, report = apply_filters(dataset, CleaningRules(drop_rare_combos=False))
    text = to_markdown(report)
    assert "Input: 2 calls, output: 1 calls" in text
    assert "| Rule" in text


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


class TestWriteReport:

    def test_markdown_by_suffix(self, tmp_path):
        path = tmp_path / "eval.md"
        write_report(_eval_report(), path)
        assert path.read_text().startswith("# Leave-one-year-out evaluation")

    def test_json_otherwise(self, tmp_path):
        path = tmp_path / "eval.json"
        write_report(_eval_report(), path)
        data = json.loads(path.read_text())
        assert data["models"] == ["gbdt", "linear"]
        assert data["rows"][0]["metrics"]["gbdt"]["mae"] == 12.5

    def test_markdown_override(self, tmp_path):
        path = tmp_path / "board.md"
        write_report([], path, markdown="# custom")
        assert path.read_text() == "# custom\n"

    def test_dataframe_json(self, tmp_path):
        path = tmp_path / "profile.json"
        write_report(pd.DataFrame({"cargo_type": ["WHEAT"], "count": [3]}), path)
        assert json.loads(path.read_text()) == [{"cargo_type": "WHEAT", "count": 3}]

    def test_list_of_models_json(self):
        board = [LeaderboardEntry(rank=1, config=TrainConfig(), overall=_m(1, 1.0))]
        assert json.loads(to_json(board))[0]["config"]["n_trees"] == 500


def test_unknown_object_has_no_markdown_layout():
    with pytest.raises(TypeError, match="no Markdown layout for dict"):
        to_markdown({"a": 1})
