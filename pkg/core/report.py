"""Report tables: cell formatting, markdown/JSON emission, rank reports
and console rendering."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from core.errors import DataError
from core.fileio import write_json_atomic, write_text_atomic
from core.metrics import higher_is_better, rank_table_grouped
from core.models import Cell, ReportTable, ResultRecord
from core.workspace import report_path

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("plain-table", "structured")
AVERAGE_RANK = "Average Rank"


# ── Formatting ────────────────────────────────────────────────


def format_number(value: float, decimals: int = 3) -> str:
    """Fixed decimals; rounding to zero never prints a minus sign."""
    if value is None or np.isnan(value):
        return "-"
    text = f"{value:.{decimals}f}"
    if text.startswith("-") and float(text) == 0.0:
        text = text[1:]
    return text


def format_cell(cell: Cell, decimals: int = 3) -> str:
    """``0.764(-0.074)``: value and in-cell gap share the value's decimals."""
    text = format_number(cell.value, decimals)
    if cell.gap is not None:
        text += f"({format_number(cell.gap, decimals)})"
    return text


def _markdown(table: ReportTable) -> str:
    lines = [f"### {table.caption}", ""]
    header = [""] + list(table.column_labels)
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    for label, row in zip(table.row_labels, table.cells):
        cells = [format_cell(c, table.decimals) for c in row]
        lines.append("| " + " | ".join([label] + cells) + " |")
    if table.footnotes:
        lines.append("")
        lines.extend(f"- {note}" for note in table.footnotes)
    return "\n".join(lines) + "\n"


def render_markdown(tables: Sequence[ReportTable]) -> str:
    return "\n".join(_markdown(t) for t in tables)


def render_structured(tables: Sequence[ReportTable]) -> dict:
    out = []
    for t in tables:
        d = t.to_dict()
        d["formatted"] = [[format_cell(c, t.decimals) for c in row] for row in t.cells]
        out.append(d)
    return {"tables": out}


def emit_report(tables: Sequence[ReportTable], out: Path, fmt: str = "plain-table") -> Path:
    """Write report.md (plain-table) or report.json (structured) under *out*."""
    if fmt not in REPORT_FORMATS:
        raise DataError(f"unknown report format: {fmt!r}")
    if not tables or all(not t.row_labels for t in tables):
        raise DataError("no results to report")
    path = report_path(out, fmt)
    if fmt == "plain-table":
        write_text_atomic(path, render_markdown(tables))
    else:
        write_json_atomic(path, render_structured(tables))
    logger.info("wrote %s", path)
    return path


def print_tables(tables: Sequence[ReportTable], console: Console | None = None) -> None:
    console = console or Console()
    for t in tables:
        table = Table(title=t.caption, title_justify="left")
        table.add_column("")
        for col in t.column_labels:
            table.add_column(col, justify="right")
        for label, row in zip(t.row_labels, t.cells):
            table.add_row(label, *(format_cell(c, t.decimals) for c in row))
        console.print(table)
        for note in t.footnotes:
            console.print(f"  [dim]{note}[/dim]")


# ── Ranks ─────────────────────────────────────────────────────


def rank_report(results_by_task: Mapping[str, Sequence[ResultRecord]]) -> ReportTable:
    """Per-task mean ranks of each model plus an overall Average Rank row.

    Cells are (scenario, metric) pairs within a task; each task row is the
    mean rank over its cells and the overall row is the mean of task rows.
    """
    if not results_by_task:
        raise DataError("no results to rank")
    models = sorted({r.model for recs in results_by_task.values() for r in recs})
    if len(models) < 2:
        raise DataError(f"rank report needs at least 2 models, got {len(models)}")

    columns: list[list[float]] = []
    directions: list[bool] = []
    groups: list[str] = []
    tasks = list(results_by_task)
    for task in tasks:
        values: dict[tuple[str, str], dict[str, float]] = {}
        for r in results_by_task[task]:
            values.setdefault((r.scenario, r.metric), {})[r.model] = r.value
        if not values:
            raise DataError(f"task {task!r} has no results")
        for (scenario, metric), by_model in sorted(values.items()):
            absent = [m for m in models if m not in by_model]
            if absent:
                raise DataError(f"incomplete results for {task}/{scenario}/{metric}: missing {absent}")
            columns.append([by_model[m] for m in models])
            directions.append(higher_is_better(metric))
            groups.append(task)

    R = np.array(columns, dtype=np.float64).T
    per_task, overall = rank_table_grouped(R, directions, groups)
    rows = [[Cell(float(v)) for v in per_task[t]] for t in tasks]
    rows.append([Cell(float(v)) for v in overall])
    return ReportTable(
        caption="Average rank across tasks (1 = best)",
        row_labels=tasks + [AVERAGE_RANK],
        column_labels=models,
        cells=rows,
        footnotes=["ties share the mean of the tied ranks"],
        decimals=2,
    )
