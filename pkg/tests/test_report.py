"""Tests for core/report.py."""

from __future__ import annotations

import json

import pytest
from rich.console import Console

from core.errors import DataError
from core.metrics import performance_gap
from core.models import Cell, ReportTable, ResultRecord
from core.report import (
    AVERAGE_RANK,
    emit_report,
    format_cell,
    format_number,
    print_tables,
    rank_report,
    render_markdown,
)


def _table() -> ReportTable:
    return ReportTable(
        caption="Feature shift (accuracy)",
        row_labels=["0.0", "0.2"],
        column_labels=["knn", "mlp"],
        cells=[
            [Cell(0.838, 0.0), Cell(0.9)],
            [Cell(0.764, performance_gap(0.838, 0.764)), Cell(float("nan"))],
        ],
        footnotes=["gaps are metric_p - metric_0"],
    )


def _rec(task: str, scenario: str, model: str, value: float, metric: str = "accuracy") -> ResultRecord:
    return ResultRecord(task=task, scenario=scenario, model=model, metric=metric, value=value)


# ── Formatting ────────────────────────────────────────────────


def test_format_cell_with_gap():
    assert format_cell(Cell(0.764, performance_gap(0.838, 0.764))) == "0.764(-0.074)"
    assert format_cell(Cell(0.5)) == "0.500"


def test_format_number_edge_cases():
    assert format_number(float("nan")) == "-"
    assert format_number(-0.0001) == "0.000"
    assert format_number(1.23456, 4) == "1.2346"


def test_render_markdown_layout():
    text = render_markdown([_table()])
    lines = text.splitlines()
    assert lines[0] == "### Feature shift (accuracy)"
    assert lines[2] == "|  | knn | mlp |"
    assert lines[3] == "|---|---|---|"
    assert lines[4] == "| 0.0 | 0.838(0.000) | 0.900 |"
    assert lines[5] == "| 0.2 | 0.764(-0.074) | - |"
    assert lines[-1] == "- gaps are metric_p - metric_0"


def test_emit_report_both_formats(tmp_path):
    md = emit_report([_table()], tmp_path, "plain-table")
    assert md == tmp_path / "report.md"
    assert md.read_text(encoding="utf-8") == render_markdown([_table()])
    js = emit_report([_table()], tmp_path, "structured")
    data = json.loads(js.read_text(encoding="utf-8"))
    table = data["tables"][0]
    assert table["columns"] == ["knn", "mlp"]
    assert table["formatted"][1] == ["0.764(-0.074)", "-"]
    assert table["cells"][0][1] == {"value": 0.9, "gap": None}


def test_emit_report_rejects_empty(tmp_path):
    empty = ReportTable(caption="x", row_labels=[], column_labels=["a"], cells=[])
    with pytest.raises(DataError, match="no results"):
        emit_report([empty], tmp_path)
    with pytest.raises(DataError, match="no results"):
        emit_report([], tmp_path)


def test_emit_report_unknown_format(tmp_path):
    with pytest.raises(DataError, match="report format"):
        emit_report([_table()], tmp_path, "html")


def test_table_shape_checked():
    with pytest.raises(DataError, match="has 1 cells"):
        ReportTable(caption="x", row_labels=["r"], column_labels=["a", "b"], cells=[[Cell(1.0)]])


def test_print_tables_renders_cells():
    console = Console(record=True, width=120)
    print_tables([_table()], console)
    text = console.export_text()
    assert "Feature shift (accuracy)" in text
    assert "0.764(-0.074)" in text


# ── Rank report ───────────────────────────────────────────────


def test_rank_report_dominant_model():
    results = {
        "df": [_rec("df", "0.0", "knn", 0.9), _rec("df", "0.0", "mlp", 0.8),
               _rec("df", "0.2", "knn", 0.7), _rec("df", "0.2", "mlp", 0.6)],
        "cdd": [_rec("cdd", "ood", "knn", 0.5), _rec("cdd", "ood", "mlp", 0.4)],
    }
    table = rank_report(results)
    assert table.row_labels == ["df", "cdd", AVERAGE_RANK]
    assert table.column_labels == ["knn", "mlp"]
    for row in table.cells:
        assert [c.value for c in row] == [1.0, 2.0]


def test_rank_report_tie_and_direction():
    results = {
        "df": [_rec("df", "0.0", "knn", 0.8), _rec("df", "0.0", "mlp", 0.8)],
        "reg": [_rec("reg", "holdout", "knn", 2.0, "rmse"), _rec("reg", "holdout", "mlp", 1.0, "rmse")],
    }
    table = rank_report(results)
    assert [c.value for c in table.cells[0]] == [1.5, 1.5]
    assert [c.value for c in table.cells[1]] == [2.0, 1.0]
    assert [c.value for c in table.cells[2]] == [1.75, 1.25]
    assert table.decimals == 2


def test_rank_report_needs_two_models():
    with pytest.raises(DataError, match="at least 2 models"):
        rank_report({"df": [_rec("df", "0.0", "knn", 0.9)]})


def test_rank_report_incomplete_cells():
    results = {"df": [_rec("df", "0.0", "knn", 0.9), _rec("df", "0.0", "mlp", 0.8),
                      _rec("df", "0.2", "knn", 0.7)]}
    with pytest.raises(DataError, match="missing \\['mlp'\\]"):
        rank_report(results)
