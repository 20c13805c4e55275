"""Typed dataclasses for the tabopen data model.

Records written to disk use to_dict()/from_dict(); on-disk keys are
snake_case. Unknown keys are ignored; missing keys use defaults.
Array-carrying records are frozen and their arrays are read-only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from core.errors import ConfigError, DataError


FEATURE_KINDS = ("numeric", "categorical")
TASKS = ("binary", "multiclass", "regression")
SPLIT_TAGS = ("train", "id_test", "ood_test")

CLASSIFICATION_OBJECTIVES = ("accuracy", "balanced_accuracy", "f1", "roc_auc")
OBJECTIVES = CLASSIFICATION_OBJECTIVES + ("aupr", "rmse")
LOWER_IS_BETTER = {"rmse"}

RUN_TASKS = ("enc", "df", "inf", "cdd", "vlo")
BUILTIN_MODELS = ("knn", "logreg", "mlp")


def _frozen_array(a: Any, dtype: Any = None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ── Schema & dataset ──────────────────────────────────────────


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "numeric"

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_KINDS:
            raise DataError(f"invalid kind for column {self.name!r}: {self.kind!r}")


@dataclass(frozen=True)
class DatasetSchema:
    """Feature columns (target excluded), target, task and tag columns."""

    columns: tuple[Column, ...]
    target: str
    task: str
    target_kind: str = "numeric"
    id_column: str | None = None
    split_column: str | None = None
    delimiter: str = ","

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate column names: {', '.join(dupes)}")
        if self.target in names:
            raise DataError(f"target {self.target!r} is listed among feature columns")
        if self.task not in TASKS:
            raise DataError(f"invalid task: {self.task!r}")
        if self.task == "regression" and self.target_kind != "numeric":
            raise DataError(f"regression target {self.target!r} must be numeric")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def is_classification(self) -> bool:
        return self.task != "regression"

    def kind_of(self, name: str) -> str:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise DataError(f"unknown column: {name!r}")

    def same_features(self, other: DatasetSchema) -> bool:
        return self.columns == other.columns

    def replace(self, **changes: Any) -> DatasetSchema:
        return dataclasses.replace(self, **changes)

    def to_hints(self) -> dict[str, Any]:
        """Hints that reload an exported table with the same schema."""
        return {
            "target": self.target,
            "task": self.task,
            "id_column": self.id_column or "sample_id",
            "split_column": self.split_column,
            "categorical": [c.name for c in self.columns if c.kind == "categorical"],
            "delimiter": self.delimiter,
        }


@dataclass(frozen=True)
class SchemaHints:
    target: str | None = None
    task: str | None = None
    id_column: str | None = None
    split_column: str | None = None
    categorical: tuple[str, ...] = ()
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> SchemaHints:
        if not d:
            return cls()
        task = d.get("task")
        if task is not None and task not in TASKS:
            raise ConfigError(f"invalid task hint: {task!r}")
        return cls(
            target=d.get("target"),
            task=task,
            id_column=d.get("id_column"),
            split_column=d.get("split_column"),
            categorical=tuple(d.get("categorical") or ()),
            delimiter=str(d.get("delimiter", ",")),
        )


@dataclass(frozen=True)
class Dataset:
    """A tabular dataset.

    X holds numeric values as floats and categorical values as integer
    codes (stored as floats); NaN marks a missing cell. For classification
    y holds class codes indexing ``classes``; for regression y holds values.
    """

    schema: DatasetSchema
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    categories: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    classes: tuple[str, ...] = ()
    splits: np.ndarray | None = None
    domain: str = ""

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
        n, m = X.shape
        if m != len(self.schema.columns):
            raise DataError(f"feature matrix has {m} columns, schema has {len(self.schema.columns)}")
        y_dtype = np.int64 if self.schema.is_classification else np.float64
        y = np.asarray(self.y, dtype=y_dtype)
        ids = np.asarray(self.ids, dtype=object)
        if y.shape != (n,) or ids.shape != (n,):
            raise DataError(f"row count mismatch: {n} rows, {y.shape[0]} targets, {ids.shape[0]} ids")
        if self.splits is not None:
            splits = np.asarray(self.splits, dtype=object)
            if splits.shape != (n,):
                raise DataError("split tags do not align with rows")
            bad = sorted({str(s) for s in splits} - set(SPLIT_TAGS))
            if bad:
                raise DataError(f"unknown split tags: {', '.join(bad)}")
            object.__setattr__(self, "splits", _frozen_array(splits, dtype=object))
        for j, col in enumerate(self.schema.columns):
            if col.kind != "categorical":
                continue
            cats = self.categories.get(col.name)
            if cats is None:
                raise DataError(f"categorical column {col.name!r} has no category table")
            codes = X[:, j][~np.isnan(X[:, j])]
            if codes.size and (codes.min() < 0 or codes.max() >= len(cats)):
                raise DataError(f"categorical codes out of range in column {col.name!r}")
        if self.schema.is_classification and y.size and (y.min() < 0 or y.max() >= len(self.classes)):
            raise DataError("class codes out of range")
        object.__setattr__(self, "X", _frozen_array(X, dtype=np.float64))
        object.__setattr__(self, "y", _frozen_array(y, dtype=y_dtype))
        object.__setattr__(self, "ids", _frozen_array(ids, dtype=object))
        object.__setattr__(self, "categories", dict(self.categories))
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.schema.feature_names

    @property
    def task(self) -> str:
        return self.schema.task

    @property
    def is_classification(self) -> bool:
        return self.schema.is_classification

    def __len__(self) -> int:
        return self.n_rows

    def take(self, idx: Sequence[int] | np.ndarray) -> Dataset:
        """Rows at *idx*, in the order given."""
        idx = np.asarray(idx, dtype=np.int64)
        return dataclasses.replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            ids=self.ids[idx],
            splits=None if self.splits is None else self.splits[idx],
        )

    def with_features(
        self,
        X: np.ndarray,
        columns: Sequence[Column] | None = None,
        categories: Mapping[str, tuple[str, ...]] | None = None,
    ) -> Dataset:
        schema = self.schema if columns is None else self.schema.replace(columns=tuple(columns))
        cats = self.categories if categories is None else categories
        return dataclasses.replace(self, schema=schema, X=X, categories=cats)

    def replace(self, **changes: Any) -> Dataset:
        return dataclasses.replace(self, **changes)

    def class_codes(self) -> np.ndarray:
        """Sorted class codes present in y."""
        return np.unique(self.y)


@dataclass(frozen=True)
class Standardizer:
    """Train statistics: mean/stddev per numeric column, mode per categorical."""

    columns: tuple[Column, ...]
    means: Mapping[str, float]
    stds: Mapping[str, float]
    modes: Mapping[str, int]
    constant: frozenset[str] = frozenset()

    def to_dict(self) -> dict[str, Any]:
        return {
            "means": dict(self.means),
            "stds": dict(self.stds),
            "modes": dict(self.modes),
            "constant": sorted(self.constant),
        }


@dataclass(frozen=True)
class Imputer:
    """Impute model backed by train Standardizer statistics."""

    stats: Standardizer


# ── Scenarios ─────────────────────────────────────────────────


@dataclass(frozen=True)
class FeatureShiftSpec:
    level: float
    removed: tuple[str, ...] = ()
    mode: str = "decremental"
    n_new: int = 0
    added: tuple[str, ...] = ()
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"mode": self.mode, "level": self.level, "seed": self.seed}
        if self.mode == "decremental":
            d["removed"] = list(self.removed)
        else:
            d["n_new"] = self.n_new
            d["added"] = list(self.added)
        return d


@dataclass(frozen=True)
class EncRun:
    """One leave-one-class-out run.

    detection_test targets are novelty labels: 1 = held-out class, 0 = known.
    """

    held_out_class: int
    held_out_label: str
    train: Dataset
    detection_test: Dataset
    seed: int
    n_novel: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "held_out_class": self.held_out_class,
            "held_out_label": self.held_out_label,
            "seed": self.seed,
            "n_novel": self.n_novel,
            "train_rows": self.train.n_rows,
            "detection_rows": self.detection_test.n_rows,
        }


@dataclass(frozen=True)
class ShiftedTest:
    """A feature-shifted test set with the spec that produced it."""

    test: Dataset
    spec: FeatureShiftSpec


@dataclass(frozen=True)
class CddScenario:
    train: Dataset
    id_test: Dataset
    ood_test: Dataset
    provenance: str = ""
    seed: int = 0
    cap: int = 0

    def __post_init__(self) -> None:
        a, b, c = self.train.schema, self.id_test.schema, self.ood_test.schema
        if not (a.same_features(b) and a.same_features(c)):
            raise DataError("train, id_test and ood_test must share an identical feature schema")

    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train.n_rows, "id_test": self.id_test.n_rows, "ood_test": self.ood_test.n_rows}


# ── Predictions & metrics ─────────────────────────────────────


@dataclass(frozen=True)
class PredictionSet:
    """Per-sample model outputs keyed to sample ids."""

    sample_ids: np.ndarray
    kind: str
    probs: np.ndarray | None = None
    values: np.ndarray | None = None
    class_order: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        ids = _frozen_array(self.sample_ids, dtype=object)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "class_order", tuple(int(c) for c in self.class_order))
        if self.kind == "class_probs":
            if self.probs is None:
                raise DataError("class_probs prediction set without probabilities")
            P = np.asarray(self.probs, dtype=np.float64)
            if P.ndim != 2 or P.shape[0] != ids.shape[0] or P.shape[1] != len(self.class_order):
                raise DataError(f"probability matrix shape {P.shape} does not match ids/classes")
            if P.size and (P.min() < 0 or P.max() > 1 or np.abs(P.sum(axis=1) - 1).max() > 1e-6):
                raise DataError("probability rows must lie in [0,1] and sum to 1")
            object.__setattr__(self, "probs", _frozen_array(P))
        elif self.kind == "regression":
            if self.values is None:
                raise DataError("regression prediction set without values")
            v = np.asarray(self.values, dtype=np.float64)
            if v.shape != ids.shape:
                raise DataError("regression values do not align with ids")
            object.__setattr__(self, "values", _frozen_array(v))
        else:
            raise DataError(f"invalid prediction kind: {self.kind!r}")

    def __len__(self) -> int:
        return int(self.sample_ids.shape[0])

    def max_prob(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def predicted_codes(self) -> np.ndarray:
        """Argmax class code per row; ties resolve to the first class in order."""
        return np.asarray(self.class_order, dtype=np.int64)[np.argmax(self.probs, axis=1)]

    def aligned_to(self, ids: Sequence[str] | np.ndarray) -> PredictionSet:
        """Reorder rows to *ids*; the id sets must match exactly."""
        wanted = [str(i) for i in ids]
        position = {str(i): k for k, i in enumerate(self.sample_ids)}
        missing = [i for i in wanted if i not in position]
        extra = sorted(set(position) - set(wanted))
        if missing or extra or len(wanted) != len(position):
            raise DataError(
                f"prediction ids do not match: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        order = np.array([position[i] for i in wanted], dtype=np.int64)
        return PredictionSet(
            sample_ids=np.asarray(wanted, dtype=object),
            kind=self.kind,
            probs=None if self.probs is None else self.probs[order],
            values=None if self.values is None else self.values[order],
            class_order=self.class_order,
        )


@dataclass(frozen=True)
class NoveltyConfig:
    theta_min: float = 0.4
    theta_max: float = 0.6

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta_min < self.theta_max <= 1.0):
            raise ConfigError(f"invalid novelty interval [{self.theta_min}, {self.theta_max}]")

    def label(self) -> str:
        return f"[{self.theta_min:g},{self.theta_max:g}]"


NOVELTY_INTERVALS = (NoveltyConfig(0.4, 0.6), NoveltyConfig(0.45, 0.55), NoveltyConfig(0.49, 0.51))


@dataclass
class EncRunResult:
    held_out_label: str
    roc_auc: float
    aupr: float
    interval_roc_auc: float
    uncertainty_novel: dict[str, float] = field(default_factory=dict)
    uncertainty_all: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "held_out_label": self.held_out_label,
            "roc_auc": self.roc_auc,
            "aupr": self.aupr,
            "interval_roc_auc": self.interval_roc_auc,
            "uncertainty_novel": dict(self.uncertainty_novel),
            "uncertainty_all": dict(self.uncertainty_all),
        }


@dataclass
class EncReport:
    runs: list[EncRunResult] = field(default_factory=list)
    mean: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"runs": [r.to_dict() for r in self.runs], "mean": dict(self.mean)}


# ── Shift statistics ──────────────────────────────────────────


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen_array(self.mean, dtype=np.float64))
        object.__setattr__(self, "covariance", _frozen_array(self.covariance, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


@dataclass(frozen=True)
class OtddConfig:
    """Solver knobs for the dataset distance.

    entropic_epsilon=None means epsilon_scale x median ground cost.
    """

    entropic_epsilon: float | None = None
    epsilon_scale: float = 0.05
    max_iterations: int = 10000
    tolerance: float = 1e-6
    subsample_cap: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.entropic_epsilon is not None and self.entropic_epsilon <= 0:
            raise ConfigError("entropic_epsilon must be > 0")
        if self.epsilon_scale <= 0:
            raise ConfigError("epsilon_scale must be > 0")
        if self.subsample_cap < 2:
            raise ConfigError("subsample_cap must be >= 2")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ShiftConfig:
    otdd: OtddConfig = field(default_factory=OtddConfig)
    eta: float = 0.1
    k_neighbors: int = 10
    fdd_layers: str = "final"  # final | sum
    loss: str = "zero_one"
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "otdd": self.otdd.to_dict(),
            "eta": self.eta,
            "k_neighbors": self.k_neighbors,
            "fdd_layers": self.fdd_layers,
            "loss": self.loss,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DisdeReport:
    term_1: float
    term_2: float
    term_3: float
    total_gap: float
    overlap_fraction: float
    eta: float
    k_neighbors: int
    n_p: int = 0
    n_q: int = 0

    @property
    def pattern(self) -> str:
        x_part = abs(self.term_1 + self.term_3)
        return "Y|X-dominant" if abs(self.term_2) > x_part else "X-dominant"

    def to_dict(self) -> dict[str, Any]:
        return {
            "term_1": self.term_1,
            "term_2": self.term_2,
            "term_3": self.term_3,
            "total_gap": self.total_gap,
            "overlap_fraction": self.overlap_fraction,
            "eta": self.eta,
            "k_neighbors": self.k_neighbors,
            "n_p": self.n_p,
            "n_q": self.n_q,
            "pattern": self.pattern,
        }


@dataclass(frozen=True)
class ShiftProfile:
    delta_x: float
    delta_y_given_x: float
    delta_y: float
    pattern: str = ""
    disde: DisdeReport | None = None
    config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("delta_x", "delta_y_given_x", "delta_y"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta_x": self.delta_x,
            "delta_y_given_x": self.delta_y_given_x,
            "delta_y": self.delta_y,
            "pattern": self.pattern,
            "disde": self.disde.to_dict() if self.disde else None,
            "config": dict(self.config),
        }


# ── Built-in models ───────────────────────────────────────────


@dataclass(frozen=True)
class LogRegConfig:
    learning_rate: float | None = None  # None: 1 / Lipschitz constant of the gradient
    max_epochs: int = 5000
    tolerance: float = 1e-6
    seed: int = 0


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 32
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ConfigError("hidden dim must be >= 1")


@dataclass(frozen=True)
class KnnModel:
    """Stored training rows, sorted by ascending sample id."""

    X: np.ndarray
    targets: np.ndarray
    k: int
    task: str
    class_order: tuple[int, ...] = ()


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    bias: float
    config: LogRegConfig
    class_order: tuple[int, ...] = (0, 1)
    epochs_run: int = 0
    loss_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    task: str
    config: MlpConfig
    class_order: tuple[int, ...] = ()
    loss_history: tuple[float, ...] = ()

    @property
    def input_dim(self) -> int:
        return int(self.W1.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.W1.shape[1])


# ── Runs & reports ────────────────────────────────────────────


DEFAULT_LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class RunConfig:
    dataset: str = ""
    model: str = "knn"
    task: str = "enc"
    export_dataset: bool = False
    seed: int = 0
    levels: list[float] = field(default_factory=lambda: list(DEFAULT_LEVELS))
    cap: int = 50000
    objectives: list[str] = field(default_factory=lambda: list(CLASSIFICATION_OBJECTIVES))
    output_dir: str = ""
    n_new: list[int] = field(default_factory=lambda: [5])
    id_test: str | None = None
    ood_test: str | None = None
    hints: str | None = None
    k: int = 5
    holdout_fraction: float = 0.2

    @property
    def models(self) -> list[str]:
        return [m.strip() for m in self.model.split(",") if m.strip()]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        if not d or not isinstance(d, Mapping):
            return cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known and v is not None}
        cfg = cls(**kwargs)
        cfg.levels = [float(x) for x in cfg.levels]
        cfg.n_new = [int(x) for x in cfg.n_new]
        cfg.objectives = [str(o) for o in cfg.objectives]
        cfg.seed = int(cfg.seed)
        cfg.cap = int(cfg.cap)
        cfg.k = int(cfg.k)
        return cfg

    def validate(self) -> None:
        if not self.dataset:
            raise ConfigError("dataset is required")
        if self.task not in RUN_TASKS:
            raise ConfigError(f"unknown task: {self.task!r} (expected one of {', '.join(RUN_TASKS)})")
        if not self.models:
            raise ConfigError("at least one model is required")
        for m in self.models:
            if m not in BUILTIN_MODELS and not m.startswith("external:"):
                raise ConfigError(f"unknown model: {m!r}")
        if self.task == "df":
            if not self.levels:
                raise ConfigError("task df requires levels")
            bad = [lv for lv in self.levels if not 0.0 <= lv <= 1.0]
            if bad:
                raise ConfigError(f"levels must lie in [0, 1]: {bad}")
        if self.task == "cdd" and self.cap < 1:
            raise ConfigError("task cdd requires a positive cap")
        if self.task == "inf" and any(n < 1 for n in self.n_new):
            raise ConfigError("n_new values must be >= 1")
        if (self.id_test is None) != (self.ood_test is None):
            raise ConfigError("id_test and ood_test must be given together")
        unknown = [o for o in self.objectives if o not in OBJECTIVES]
        if unknown:
            raise ConfigError(f"unknown objectives: {unknown}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "task": self.task,
            "export_dataset": self.export_dataset,
            "seed": self.seed,
            "levels": list(self.levels),
            "cap": self.cap,
            "objectives": list(self.objectives),
            "output_dir": self.output_dir,
            "n_new": list(self.n_new),
            "id_test": self.id_test,
            "ood_test": self.ood_test,
            "hints": self.hints,
            "k": self.k,
            "holdout_fraction": self.holdout_fraction,
        }


@dataclass(frozen=True)
class Cell:
    value: float
    gap: float | None = None


@dataclass
class ReportTable:
    caption: str
    row_labels: list[str]
    column_labels: list[str]
    cells: list[list[Cell]]
    footnotes: list[str] = field(default_factory=list)
    decimals: int = 3

    def __post_init__(self) -> None:
        if len(self.cells) != len(self.row_labels):
            raise DataError(f"table {self.caption!r}: {len(self.cells)} rows for {len(self.row_labels)} labels")
        for label, row in zip(self.row_labels, self.cells):
            if len(row) != len(self.column_labels):
                raise DataError(f"table {self.caption!r}: row {label!r} has {len(row)} cells")

    def to_dict(self) -> dict[str, Any]:
        return {
            "caption": self.caption,
            "rows": self.row_labels,
            "columns": self.column_labels,
            "cells": [
                [{"value": c.value, "gap": c.gap} for c in row] for row in self.cells
            ],
            "footnotes": self.footnotes,
        }


@dataclass(frozen=True)
class ResultRecord:
    """One (scenario, model, metric) value with provenance."""

    task: str
    scenario: str
    model: str
    metric: str
    value: float
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "scenario": self.scenario,
            "model": self.model,
            "metric": self.metric,
            "value": self.value,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ResultRecord:
        return cls(
            task=str(d.get("task", "")),
            scenario=str(d.get("scenario", "")),
            model=str(d.get("model", "")),
            metric=str(d.get("metric", "")),
            value=float(d.get("value", float("nan"))),
            provenance=dict(d.get("provenance") or {}),
        )
