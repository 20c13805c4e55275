"""Task pipelines: enc, df, inf, cdd and vlo.

Each pipeline builds its scenarios, trains every requested model, scores
the predictions and returns report tables plus flat result records.
``run`` resolves the configuration, executes one task and writes
report.md, report.json, results.json, manifest.yaml and run_log.json.
All outputs are free of timestamps so identical inputs give identical
bytes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from core.baselines import (
    default_loss,
    knn_fit,
    knn_predict_proba,
    load_predictions,
    logreg_fit,
    logreg_predict_proba,
    mlp_activations,
    mlp_fit,
    mlp_predict_proba,
)
from core.data import (
    apply_standardizer,
    fill_missing,
    fit_imputer,
    fit_standardizer,
    load_schema_hints,
    load_split_tables,
    load_table,
    partition_by_split,
    save_table,
    split_holdout,
)
from core.errors import ConfigError, DataError, OverlapError
from core.fileio import read_json, read_yaml, write_json_atomic, write_yaml_atomic
from core.metrics import enc_evaluate, performance_gap, score_objective
from core.models import (
    OBJECTIVES,
    Cell,
    Dataset,
    LogRegConfig,
    MlpConfig,
    NoveltyConfig,
    PredictionSet,
    ReportTable,
    ResultRecord,
    RunConfig,
    ShiftConfig,
    ShiftedTest,
)
from core.report import emit_report, rank_report
from core.scenarios import (
    align_features,
    cdd_prepare,
    decremental_shift,
    enc_generate,
    export_scenario,
    incremental_shift_with_spec,
)
from core.shift import shift_profile
from core.workspace import (
    manifest_path,
    output_root,
    resolve_dataset,
    results_path,
    run_log_path,
    scenario_dir,
)

logger = logging.getLogger(__name__)

EXTERNAL_PREFIX = "external:"
SHIFT_MODEL = "shift_mlp"

_METRIC_LABELS = {
    "accuracy": "Accuracy",
    "balanced_accuracy": "Balanced Acc.",
    "f1": "F1",
    "roc_auc": "ROC-AUC",
    "aupr": "AUPR",
    "rmse": "RMSE",
}


# ── Run log ───────────────────────────────────────────────────


@dataclass
class RunLog:
    """Ordered, timestamp-free record of what a run did."""

    events: list[dict[str, Any]] = field(default_factory=list)
    train_invocations: dict[str, int] = field(default_factory=dict)

    def record(self, event: str, **fields: Any) -> None:
        self.events.append({"event": event, **fields})

    def count_training(self, model: str, scenario: str) -> None:
        self.train_invocations[model] = self.train_invocations.get(model, 0) + 1
        self.record("train", model=model, scenario=scenario)

    def to_dict(self) -> dict[str, Any]:
        return {"train_invocations": dict(sorted(self.train_invocations.items())), "events": self.events}


# ── Preprocessing ─────────────────────────────────────────────


class Preprocessor:
    """Fill missing cells and standardize with statistics of one training set."""

    def __init__(self, train: Dataset) -> None:
        self.imputer = fit_imputer(train)
        self.stats = fit_standardizer(fill_missing(self.imputer, train))

    def __call__(self, ds: Dataset) -> Dataset:
        return apply_standardizer(self.stats, fill_missing(self.imputer, ds))


# ── Model runners ─────────────────────────────────────────────


class ModelRunner:
    """Uniform fit/predict over built-in models and external prediction files."""

    def __init__(self, name: str, config: RunConfig, log: RunLog) -> None:
        self.name = name
        self.config = config
        self.log = log
        self.external_dir: Path | None = None
        if name.startswith(EXTERNAL_PREFIX):
            self.external_dir = Path(name[len(EXTERNAL_PREFIX):]).expanduser()
            if not self.external_dir.is_dir():
                raise ConfigError(f"external prediction directory not found: {self.external_dir}")

    @property
    def is_external(self) -> bool:
        return self.external_dir is not None

    def fit(self, train: Dataset, scenario: str) -> Any:
        if self.is_external:
            self.log.record("external", model=self.name, scenario=scenario)
            return None
        self.log.count_training(self.name, scenario)
        seed = self.config.seed
        if self.name == "knn":
            return knn_fit(train, min(self.config.k, train.n_rows))
        if self.name == "logreg":
            return logreg_fit(train, LogRegConfig(seed=seed))
        if self.name == "mlp":
            return mlp_fit(train, MlpConfig(seed=seed))
        raise ConfigError(f"unknown model: {self.name!r}")

    def predict(
        self, fitted: Any, test: Dataset, scenario: str, classes: tuple[str, ...] | None = None
    ) -> PredictionSet:
        """Predictions for *test*; external files are checked against *classes* (default test.classes)."""
        self.log.record("predict", model=self.name, scenario=scenario, rows=test.n_rows)
        if self.is_external:
            path = self.external_dir / f"{scenario}.csv"
            if not path.is_file():
                raise ConfigError(f"missing external predictions: {path}")
            return load_predictions(path, {"classes": list(classes or test.classes)}, expected_ids=test.ids)
        if self.name == "knn":
            return knn_predict_proba(fitted, test)
        if self.name == "logreg":
            return logreg_predict_proba(fitted, test)
        return mlp_predict_proba(fitted, test)


# ── Helpers ───────────────────────────────────────────────────


@dataclass
class TaskResult:
    tables: list[ReportTable] = field(default_factory=list)
    records: list[ResultRecord] = field(default_factory=list)
    exports: list[str] = field(default_factory=list)


def objectives_for(test: Dataset, requested: list[str]) -> list[str]:
    """Requested objectives that apply to the task of *test*."""
    if not test.is_classification:
        return ["rmse"]
    out = [o for o in requested if o != "rmse"]
    if test.task != "binary":
        out = [o for o in out if o != "aupr"]
    if np.unique(test.y).size < 2:
        out = [o for o in out if o not in ("roc_auc", "aupr")]
    return out


def _score_all(objectives: list[str], test: Dataset, preds: PredictionSet) -> dict[str, float]:
    aligned = preds.aligned_to(test.ids)
    return {o: score_objective(o, test.y, aligned) for o in objectives}


def _gap(base: float, value: float, mode: str) -> float:
    try:
        return performance_gap(base, value, mode)
    except DataError:
        return float("nan")


def _level_label(level: float) -> str:
    return f"{level * 100:g}%"


def _export(
    result: TaskResult, out: Path, name: str, scenario: Any, source: dict[str, Any], config: RunConfig
) -> None:
    if not config.export_dataset:
        return
    path = scenario_dir(name, out)
    export_scenario(scenario, path, source)
    result.exports.append(str(path))


def _holdout(ds: Dataset, config: RunConfig) -> tuple[Dataset, Dataset]:
    """The i.i.d. train/test portion: split tags when present, else a seeded holdout."""
    if ds.splits is not None:
        train, id_test, _ = partition_by_split(ds)
        return train, id_test
    return split_holdout(ds, config.holdout_fraction, config.seed, stratify=ds.is_classification)


# ── Emerging new classes ──────────────────────────────────────


def run_enc(ds: Dataset, config: RunConfig, runners: list[ModelRunner], out: Path, source: dict) -> TaskResult:
    result = TaskResult()
    runs = enc_generate(ds, config.seed, config.holdout_fraction)
    for enc_run in runs:
        _export(result, out, f"enc_run_{enc_run.held_out_label}", enc_run, source, config)
    for runner in runners:
        pairs = []
        for enc_run in runs:
            scenario = f"enc_run_{enc_run.held_out_label}"
            prep = Preprocessor(enc_run.train)
            fitted = runner.fit(prep(enc_run.train), scenario)
            preds = runner.predict(fitted, prep(enc_run.detection_test), scenario, classes=enc_run.train.classes)
            pairs.append((enc_run, preds))
        report = enc_evaluate(pairs, NoveltyConfig())
        interval_keys = list(report.runs[0].uncertainty_novel)
        columns = ["ROC-AUC", "AUPR", "Interval ROC-AUC"]
        columns += [f"U-novel {k}" for k in interval_keys] + [f"U-all {k}" for k in interval_keys]
        rows, labels = [], []
        for r in report.runs:
            labels.append(f"held out {r.held_out_label}")
            values = [r.roc_auc, r.aupr, r.interval_roc_auc]
            values += [r.uncertainty_novel[k] for k in interval_keys]
            values += [r.uncertainty_all[k] for k in interval_keys]
            rows.append([Cell(v) for v in values])
            scenario = f"enc_run_{r.held_out_label}"
            for metric in ("roc_auc", "aupr", "interval_roc_auc"):
                result.records.append(ResultRecord("enc", scenario, runner.name, metric, getattr(r, metric),
                                                   {"seed": config.seed, "held_out": r.held_out_label}))
            for k in interval_keys:
                result.records.append(ResultRecord("enc", scenario, runner.name, f"uncertainty_novel{k}",
                                                   r.uncertainty_novel[k], {"seed": config.seed}))
                result.records.append(ResultRecord("enc", scenario, runner.name, f"uncertainty_all{k}",
                                                   r.uncertainty_all[k], {"seed": config.seed}))
        labels.append("Average")
        mean_values = [report.mean["roc_auc"], report.mean["aupr"], report.mean["interval_roc_auc"]]
        mean_values += [report.mean[f"uncertainty_novel{k}"] for k in interval_keys]
        mean_values += [report.mean[f"uncertainty_all{k}"] for k in interval_keys]
        rows.append([Cell(v) for v in mean_values])
        for metric, value in report.mean.items():
            result.records.append(ResultRecord("enc", "enc_mean", runner.name, f"{metric}_mean", value,
                                               {"seed": config.seed, "runs": len(report.runs)}))
        result.tables.append(ReportTable(
            caption=f"Emerging new classes: {runner.name}",
            row_labels=labels,
            column_labels=columns,
            cells=rows,
            footnotes=[
                f"seed={config.seed}; novelty score = 1 - max class probability",
                "interval ROC-AUC scores the hard rule max-prob in [0.4, 0.6]",
            ],
        ))
    return result


# ── Feature shift ─────────────────────────────────────────────


def run_df(ds: Dataset, config: RunConfig, runners: list[ModelRunner], out: Path, source: dict) -> TaskResult:
    """Train once on full features, then evaluate every decremental level."""
    result = TaskResult()
    train, test = _holdout(ds, config)
    prep = Preprocessor(train)
    objectives = objectives_for(test, config.objectives)
    levels = sorted(set([0.0] + [float(lv) for lv in config.levels]))
    shifted = {}
    for level in levels:
        test_l, spec = decremental_shift(train, test, level, config.seed)
        shifted[level] = test_l
        if level > 0:
            _export(result, out, f"df_level_{level:g}", ShiftedTest(test_l, spec), source, config)
        result.records.append(ResultRecord("df", f"df_level_{level:g}", "-", "n_removed", float(len(spec.removed)),
                                           {"removed": list(spec.removed), "seed": config.seed}))

    for runner in runners:
        fitted = runner.fit(prep(train), "df_train")
        scores = {}
        for level in levels:
            preds = runner.predict(fitted, prep(shifted[level]), f"df_level_{level:g}")
            scores[level] = _score_all(objectives, shifted[level], preds)
        base = scores[0.0]
        abs_rows, rel_rows = [], []
        for level in levels:
            abs_rows.append([Cell(scores[level][o], _gap(base[o], scores[level][o], "absolute")) for o in objectives])
            rel_rows.append([Cell(_gap(base[o], scores[level][o], "relative")) for o in objectives])
            scenario = f"df_level_{level:g}"
            for o in objectives:
                prov = {"seed": config.seed, "level": level}
                result.records.append(ResultRecord("df", scenario, runner.name, o, scores[level][o], prov))
                result.records.append(ResultRecord("df", scenario, runner.name, f"{o}_gap",
                                                   _gap(base[o], scores[level][o], "absolute"), prov))
                result.records.append(ResultRecord("df", scenario, runner.name, f"{o}_rel_gap",
                                                   _gap(base[o], scores[level][o], "relative"), prov))
        row_labels = [_level_label(lv) for lv in levels]
        columns = [_METRIC_LABELS[o] for o in objectives]
        result.tables.append(ReportTable(
            caption=f"Decremental features: {runner.name} (value(absolute gap))",
            row_labels=row_labels, column_labels=columns, cells=abs_rows,
            footnotes=[f"seed={config.seed}; model trained once on all features; removed columns imputed with train statistics"],
        ))
        result.tables.append(ReportTable(
            caption=f"Decremental features: {runner.name} (relative gap)",
            row_labels=row_labels, column_labels=columns, cells=rel_rows, decimals=4,
        ))
    return result


def run_inf(ds: Dataset, config: RunConfig, runners: list[ModelRunner], out: Path, source: dict) -> TaskResult:
    """Append new columns to the test set, then truncate back to the train schema."""
    result = TaskResult()
    train, test = _holdout(ds, config)
    prep = Preprocessor(train)
    objectives = objectives_for(test, config.objectives)
    widened: dict[int, Dataset] = {0: test}
    for n_new in sorted(set(config.n_new)):
        shifted = incremental_shift_with_spec(test, n_new, config.seed)
        _export(result, out, f"inf_new_{n_new}", shifted, source, config)
        widened[n_new] = align_features(train.schema, shifted.test)

    for runner in runners:
        fitted = runner.fit(prep(train), "inf_train")
        scores = {}
        for n_new, test_n in widened.items():
            scenario = "inf_base" if n_new == 0 else f"inf_new_{n_new}"
            preds = runner.predict(fitted, prep(test_n), scenario)
            scores[n_new] = _score_all(objectives, test_n, preds)
        base = scores[0]
        rows = []
        for n_new in widened:
            rows.append([Cell(scores[n_new][o], _gap(base[o], scores[n_new][o], "absolute")) for o in objectives])
            scenario = "inf_base" if n_new == 0 else f"inf_new_{n_new}"
            for o in objectives:
                result.records.append(ResultRecord("inf", scenario, runner.name, o, scores[n_new][o],
                                                   {"seed": config.seed, "n_new": n_new}))
        result.tables.append(ReportTable(
            caption=f"Incremental features: {runner.name} (value(absolute gap))",
            row_labels=[f"n_new={n}" for n in widened],
            column_labels=[_METRIC_LABELS[o] for o in objectives],
            cells=rows,
            footnotes=[f"seed={config.seed}; columns outside the training schema are dropped before prediction"],
        ))
    return result


# ── Changing distributions ────────────────────────────────────


def _cdd_splits(ds: Dataset, config: RunConfig, source: dict[str, Any]) -> tuple[Dataset, Dataset, Dataset]:
    if config.id_test and config.ood_test:
        return load_split_tables(source["dataset"], config.id_test, config.ood_test, source.get("hints"))
    if ds.splits is None:
        raise ConfigError("task cdd needs a split_column hint or --id-test/--ood-test files")
    return partition_by_split(ds)


def run_cdd(
    ds: Dataset, config: RunConfig, runners: list[ModelRunner], out: Path, source: dict, log: RunLog
) -> TaskResult:
    """ID/OOD scores per model, then shift statistics for binary targets."""
    result = TaskResult()
    scenario = cdd_prepare(*_cdd_splits(ds, config, source), cap=config.cap, seed=config.seed)
    _export(result, out, "cdd", scenario, source, config)
    prep = Preprocessor(scenario.train)
    train, id_test, ood_test = prep(scenario.train), prep(scenario.id_test), prep(scenario.ood_test)
    id_objectives = objectives_for(scenario.id_test, config.objectives)
    objectives = [o for o in objectives_for(scenario.ood_test, config.objectives) if o in id_objectives]

    rows, labels = [], []
    for runner in runners:
        fitted = runner.fit(train, "cdd_train")
        id_scores = _score_all(objectives, scenario.id_test, runner.predict(fitted, id_test, "cdd_id_test"))
        ood_scores = _score_all(objectives, scenario.ood_test, runner.predict(fitted, ood_test, "cdd_ood_test"))
        row = []
        prov = {"seed": config.seed, "cap": config.cap}
        for o in objectives:
            gap = performance_gap(id_scores[o], ood_scores[o], "absolute")
            row += [Cell(id_scores[o]), Cell(ood_scores[o], gap)]
            result.records.append(ResultRecord("cdd", "cdd_id_test", runner.name, o, id_scores[o], prov))
            result.records.append(ResultRecord("cdd", "cdd_ood_test", runner.name, o, ood_scores[o], prov))
            result.records.append(ResultRecord("cdd", "cdd_ood_test", runner.name, f"{o}_gap", gap, prov))
        rows.append(row)
        labels.append(runner.name)
    columns = []
    for o in objectives:
        columns += [f"{_METRIC_LABELS[o]} ID", f"{_METRIC_LABELS[o]} OOD"]
    sizes = scenario.split_sizes()
    scores_table = ReportTable(
        caption="Changing distributions: ID vs OOD (OOD cells carry the gap to ID)",
        row_labels=labels, column_labels=columns, cells=rows,
        footnotes=[f"seed={config.seed}; cap={config.cap}; rows train/id/ood = "
                   f"{sizes['train']}/{sizes['id_test']}/{sizes['ood_test']}"],
    )
    result.tables.append(scores_table)

    if scenario.train.task != "binary":
        scores_table.footnotes.append("shift profile skipped: label shift is defined for binary targets")
        return result

    # shift statistics come from a built-in MLP trained on the source split
    log.count_training(SHIFT_MODEL, "cdd_train")
    model = mlp_fit(train, MlpConfig(seed=config.seed))
    embeddings = {"train": mlp_activations(model, train), "ood_test": mlp_activations(model, ood_test)}
    predictions = {"id_test": mlp_predict_proba(model, id_test), "ood_test": mlp_predict_proba(model, ood_test)}
    cfg = ShiftConfig(loss=default_loss(scenario.train.task), seed=config.seed)
    try:
        profile = shift_profile(scenario, embeddings, predictions, cfg)
    except OverlapError as exc:
        logger.warning("%s", exc)
        scores_table.footnotes.append(f"shift profile skipped: {exc}")
        result.records.append(ResultRecord("cdd", "cdd_shift", SHIFT_MODEL, "overlap_error", float("nan"),
                                           exc.to_dict()))
        return result

    disde = profile.disde
    values = {
        "delta_x": profile.delta_x,
        "delta_y_given_x": profile.delta_y_given_x,
        "delta_y": profile.delta_y,
        "term_1": disde.term_1,
        "term_2": disde.term_2,
        "term_3": disde.term_3,
        "total_gap": disde.total_gap,
        "overlap_fraction": disde.overlap_fraction,
    }
    for metric, value in values.items():
        result.records.append(ResultRecord("cdd", "cdd_shift", SHIFT_MODEL, metric, value,
                                           {"pattern": profile.pattern, **cfg.to_dict()}))
    result.tables.append(ReportTable(
        caption="Shift profile: train vs ood_test",
        row_labels=["train vs ood_test"],
        column_labels=["dx (OTDD)", "dy|x (FDD)", "dy (label)", "term I", "term II", "term III", "total gap",
                       "overlap"],
        cells=[[Cell(v) for v in values.values()]],
        footnotes=[
            f"pattern: {profile.pattern}",
            f"eta={cfg.eta}; k={cfg.k_neighbors}; loss={cfg.loss}; fdd layers={cfg.fdd_layers}; "
            f"epsilon scale={cfg.otdd.epsilon_scale}; subsample cap={cfg.otdd.subsample_cap}",
            "features standardized with train statistics; gap terms use id_test as the source sample",
        ],
        decimals=4,
    ))
    return result


# ── Varied objectives ─────────────────────────────────────────


def run_vlo(ds: Dataset, config: RunConfig, runners: list[ModelRunner], out: Path, source: dict) -> TaskResult:
    """Every requested objective on the i.i.d. portion."""
    result = TaskResult()
    train, test = _holdout(ds, config)
    if config.export_dataset:
        path = scenario_dir("vlo", out)
        save_table(train, path / "train.csv")
        save_table(test, path / "test.csv")
        result.exports.append(str(path))
    prep = Preprocessor(train)
    objectives = objectives_for(test, config.objectives)
    rows = []
    for runner in runners:
        fitted = runner.fit(prep(train), "vlo_train")
        scores = _score_all(objectives, test, runner.predict(fitted, prep(test), "vlo_test"))
        rows.append([Cell(scores[o]) for o in objectives])
        for o in objectives:
            result.records.append(ResultRecord("vlo", "vlo_test", runner.name, o, scores[o], {"seed": config.seed}))
    result.tables.append(ReportTable(
        caption="Varied objectives (i.i.d. test)",
        row_labels=[r.name for r in runners],
        column_labels=[_METRIC_LABELS[o] for o in objectives],
        cells=rows,
        footnotes=[f"seed={config.seed}; objectives: {', '.join(objectives)}"],
    ))
    return result


# ── Orchestration ─────────────────────────────────────────────

_TASKS: dict[str, Callable[..., TaskResult]] = {"enc": run_enc, "df": run_df, "inf": run_inf, "vlo": run_vlo}


def rankable(records: list[ResultRecord]) -> list[ResultRecord]:
    """Model-level metric records that take part in rank aggregation."""
    return [r for r in records if r.metric in OBJECTIVES and r.model not in (SHIFT_MODEL, "-")]


def resolve_config(config: RunConfig) -> RunConfig:
    config.validate()
    if not config.output_dir:
        config.output_dir = str(output_root())
    return config


def execute(config: RunConfig) -> tuple[TaskResult, RunLog]:
    """Run one task and write every output file; raises on failure."""
    config = resolve_config(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = RunLog()

    table, hints_file = resolve_dataset(config.dataset)
    hints_path = Path(config.hints) if config.hints else hints_file
    hints = load_schema_hints(hints_path) if hints_path else None
    ds = load_table(table, hints)
    log.record("load", dataset=table.name, rows=ds.n_rows, features=ds.n_features, task=ds.task)
    source: dict[str, Any] = {
        "dataset": str(table),
        "hints": read_yaml(hints_path) if hints_path else {},
        "seed": config.seed,
        "holdout_fraction": config.holdout_fraction,
        "test_fraction": config.holdout_fraction,
        "split_seed": config.seed,
        "use_split_tags": ds.splits is not None,
    }
    if config.id_test and config.ood_test:
        source.update({"id_test": config.id_test, "ood_test": config.ood_test})

    runners = [ModelRunner(name, config, log) for name in config.models]
    if config.task == "cdd":
        result = run_cdd(ds, config, runners, out, source, log)
    else:
        result = _TASKS[config.task](ds, config, runners, out, source)
    if len(runners) >= 2:
        result.tables.append(rank_report({config.task: rankable(result.records)}))

    emit_report(result.tables, out, "plain-table")
    emit_report(result.tables, out, "structured")
    write_json_atomic(results_path(out), {"records": [r.to_dict() for r in result.records]})
    write_yaml_atomic(manifest_path(out), {"config": config.to_dict(), "exports": result.exports})
    write_json_atomic(run_log_path(out), log.to_dict())
    logger.info("%s finished: %d tables, %d records -> %s", config.task, len(result.tables), len(result.records), out)
    return result, log


def run(config: RunConfig) -> int:
    """Execute a run and map failures to exit codes (2 config, 3 data)."""
    try:
        execute(config)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 3
    return 0


def load_results(path: Path) -> list[ResultRecord]:
    data = read_json(path)
    if not data:
        raise ConfigError(f"missing or empty results file: {path}")
    return [ResultRecord.from_dict(d) for d in data.get("records", [])]


def rank_results(paths: list[Path], out: Path | None = None) -> ReportTable:
    """Two-level average-rank report over several results files."""
    by_task: dict[str, list[ResultRecord]] = {}
    for p in paths:
        for r in rankable(load_results(Path(p))):
            by_task.setdefault(r.task, []).append(r)
    table = rank_report(by_task)
    if out is not None:
        emit_report([table], out, "plain-table")
        emit_report([table], out, "structured")
    return table
