"""End-to-end runs through core/pipeline.py."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from core.data import load_table, split_holdout
from core.errors import ConfigError
from core.fileio import read_json
from core.models import RunConfig
from core.pipeline import execute, load_results, rank_results, run


def _config(dataset: Path | str, out: Path, **overrides) -> RunConfig:
    return RunConfig.from_dict({"dataset": str(dataset), "output_dir": str(out), **overrides})


def _records(out: Path) -> list[dict]:
    return read_json(out / "results.json")["records"]


def _value(records: list[dict], scenario: str, model: str, metric: str) -> float:
    hits = [r["value"] for r in records if (r["scenario"], r["model"], r["metric"]) == (scenario, model, metric)]
    assert len(hits) == 1, (scenario, model, metric)
    return hits[0]


# ── Tasks ─────────────────────────────────────────────────────


def test_enc_on_iris(iris_csv, out_dir):
    result, log = execute(_config(iris_csv, out_dir, task="enc", model="knn"))
    table = result.tables[0]
    assert table.row_labels == ["held out setosa", "held out versicolor", "held out virginica", "Average"]
    assert table.column_labels[:3] == ["ROC-AUC", "AUPR", "Interval ROC-AUC"]
    assert log.train_invocations == {"knn": 3}
    for name in ("report.md", "report.json", "results.json", "manifest.yaml", "run_log.json"):
        assert (out_dir / name).is_file()
    # setosa is linearly separable from the rest
    assert _value(_records(out_dir), "enc_run_setosa", "knn", "roc_auc") >= 0.9


def test_df_trains_once(iris_csv, out_dir):
    result, log = execute(_config(iris_csv, out_dir, task="df", model="knn"))
    assert log.train_invocations == {"knn": 1}
    values, rel = result.tables
    assert values.row_labels == ["0%", "20%", "40%", "60%", "80%", "100%"]
    assert all(c.gap == 0.0 for c in values.cells[0])
    assert rel.decimals == 4
    run_log = read_json(out_dir / "run_log.json")
    assert [e["scenario"] for e in run_log["events"] if e["event"] == "train"] == ["df_train"]


def test_df_accuracy_trend_over_seeds(iris_csv, tmp_path):
    levels = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    acc = np.zeros((10, len(levels)))
    for seed in range(10):
        out = tmp_path / f"seed{seed}"
        execute(_config(iris_csv, out, task="df", model="knn", seed=seed, objectives=["accuracy"]))
        records = _records(out)
        for j, level in enumerate(levels):
            acc[seed, j] = _value(records, f"df_level_{level:g}", "knn", "accuracy")
    medians = np.median(acc, axis=0)
    assert medians[0] >= 0.90
    assert (np.diff(medians) <= 0).all()
    assert abs(medians[-1] - 1.0 / 3) <= 0.1


def test_inf_truncation_matches_base(iris_csv, out_dir):
    result, _ = execute(_config(iris_csv, out_dir, task="inf", model="knn", n_new=[2, 5]))
    assert result.tables[0].row_labels == ["n_new=0", "n_new=2", "n_new=5"]
    records = _records(out_dir)
    for metric in ("accuracy", "balanced_accuracy", "f1", "roc_auc"):
        base = _value(records, "inf_base", "knn", metric)
        assert _value(records, "inf_new_2", "knn", metric) == base
        assert _value(records, "inf_new_5", "knn", metric) == base


def test_cdd_with_shift_profile(shift_csv, out_dir):
    result, log = execute(_config(shift_csv, out_dir, task="cdd", model="knn", cap=1000))
    scores = result.tables[0]
    assert scores.row_labels == ["knn"]
    assert scores.column_labels[:2] == ["Accuracy ID", "Accuracy OOD"]
    assert "rows train/id/ood = 160/60/60" in scores.footnotes[0]
    assert log.train_invocations == {"knn": 1, "shift_mlp": 1}
    shift_metrics = {r["metric"] for r in _records(out_dir) if r["scenario"] == "cdd_shift"}
    assert {"delta_x", "delta_y_given_x", "delta_y", "term_1", "term_2", "term_3"} <= shift_metrics
    profile = result.tables[1]
    assert profile.caption == "Shift profile: train vs ood_test"
    terms = dict(zip(profile.column_labels, (c.value for c in profile.cells[0])))
    assert terms["term I"] + terms["term II"] + terms["term III"] == pytest.approx(terms["total gap"], abs=1e-12)


def test_cdd_needs_split_source(iris_csv, out_dir):
    assert run(_config(iris_csv, out_dir, task="cdd", model="knn")) == 2


def test_vlo_ranks_two_models(iris_csv, out_dir):
    result, log = execute(_config(iris_csv, out_dir, task="vlo", model="knn,mlp"))
    scores, ranks = result.tables
    assert scores.row_labels == ["knn", "mlp"]
    assert scores.column_labels == ["Accuracy", "Balanced Acc.", "F1", "ROC-AUC"]
    assert ranks.row_labels == ["vlo", "Average Rank"]
    assert sum(c.value for c in ranks.cells[1]) == pytest.approx(3.0)
    assert log.train_invocations == {"knn": 1, "mlp": 1}


def test_regression_vlo_uses_rmse(tmp_path, out_dir):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 2))
    y = x[:, 0] * 2.0 + rng.normal(scale=0.1, size=100)
    lines = ["a,b,y"] + [f"{a:.6f},{b:.6f},{t:.6f}" for (a, b), t in zip(x, y)]
    path = tmp_path / "reg.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    result, _ = execute(_config(path, out_dir, task="vlo", model="knn"))
    assert result.tables[0].column_labels == ["RMSE"]
    assert result.tables[0].cells[0][0].value < 1.0


def test_reports_are_byte_identical(iris_csv, tmp_path):
    for name in ("a", "b"):
        execute(_config(iris_csv, tmp_path / name, task="df", model="knn,mlp", seed=3))
    for name in ("report.md", "report.json", "results.json", "run_log.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ── Errors ────────────────────────────────────────────────────


def test_run_exit_codes(iris_csv, tmp_path, out_dir):
    assert run(_config(tmp_path / "nope", out_dir, task="vlo")) == 2
    assert run(_config(iris_csv, out_dir, task="vlo", model="forest")) == 2
    assert run(_config(iris_csv, out_dir, task="df", levels=[1.5])) == 2
    bad = tmp_path / "binary.csv"
    bad.write_text("x,y\n" + "\n".join(f"{i},{i % 2}" for i in range(20)) + "\n", encoding="utf-8")
    assert run(_config(bad, out_dir, task="enc")) == 3
    assert run(_config(iris_csv, out_dir, task="vlo", model="knn")) == 0


def test_registered_dataset_name(data_dir, out_dir):
    assert run(_config("iris", out_dir, task="vlo", model="knn")) == 0
    assert run(_config("unknown_table", out_dir, task="vlo", model="knn")) == 2


# ── External models ───────────────────────────────────────────


def test_external_predictions(iris_csv, tmp_path, out_dir):
    preds = tmp_path / "preds"
    preds.mkdir()
    _, test = split_holdout(load_table(iris_csv), 0.2, seed=0)
    rows = ["id,p_setosa,p_versicolor,p_virginica"]
    for sid, code in zip(test.ids, test.y):
        rows.append(f"{sid}," + ",".join("1" if c == code else "0" for c in range(3)))
    (preds / "vlo_test.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    model = f"external:{preds}"
    result, log = execute(_config(iris_csv, out_dir, task="vlo", model=f"knn,{model}"))
    assert [c.value for c in result.tables[0].cells[1]] == [1.0, 1.0, 1.0, 1.0]
    assert log.train_invocations == {"knn": 1}
    assert any(e["event"] == "external" for e in log.events)


def test_external_missing_file(iris_csv, tmp_path, out_dir):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(_config(iris_csv, out_dir, task="vlo", model=f"external:{empty}")) == 2
    assert run(_config(iris_csv, out_dir, task="vlo", model=f"external:{tmp_path / 'absent'}")) == 2


# ── Exports & ranks ───────────────────────────────────────────


def test_export_dataset_writes_scenarios(iris_csv, out_dir):
    result, _ = execute(_config(iris_csv, out_dir, task="df", model="knn", levels=[0.2, 0.6], export_dataset=True))
    names = sorted(Path(p).name for p in result.exports)
    assert names == ["df_level_0.2", "df_level_0.6"]
    manifest = yaml.safe_load((out_dir / "scenarios" / "df_level_0.6" / "manifest.yaml").read_text(encoding="utf-8"))
    assert len(manifest["removed"]) == 3
    top = yaml.safe_load((out_dir / "manifest.yaml").read_text(encoding="utf-8"))
    assert top["config"]["task"] == "df"
    assert len(top["exports"]) == 2


def test_rank_results_across_runs(iris_csv, tmp_path):
    execute(_config(iris_csv, tmp_path / "vlo", task="vlo", model="knn,mlp"))
    execute(_config(iris_csv, tmp_path / "df", task="df", model="knn,mlp", levels=[0.4]))
    table = rank_results([tmp_path / "vlo" / "results.json", tmp_path / "df" / "results.json"], tmp_path / "ranks")
    assert table.row_labels == ["vlo", "df", "Average Rank"]
    overall = [c.value for c in table.cells[-1]]
    assert overall == pytest.approx([
        (table.cells[0][0].value + table.cells[1][0].value) / 2,
        (table.cells[0][1].value + table.cells[1][1].value) / 2,
    ])
    assert (tmp_path / "ranks" / "report.md").is_file()
    data = json.loads((tmp_path / "ranks" / "report.json").read_text(encoding="utf-8"))
    assert data["tables"][0]["rows"][-1] == "Average Rank"


def test_load_results_missing(tmp_path):
    with pytest.raises(ConfigError, match="results file"):
        load_results(tmp_path / "none.json")
