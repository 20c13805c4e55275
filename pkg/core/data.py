"""Dataset ingestion, schema inference, standardization, imputation and
seeded stratified sampling/splitting."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from core.errors import DataError
from core.fileio import read_table, read_yaml, write_table_atomic
from core.models import (
    Column,
    Dataset,
    DatasetSchema,
    Imputer,
    SchemaHints,
    Standardizer,
    SPLIT_TAGS,
)

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "?"})
MAX_MULTICLASS = 10
STRATIFY_MODES = ("class_split", "class", "split")


# ── Loading ───────────────────────────────────────────────────


def load_schema_hints(path: Path) -> SchemaHints:
    """Read a YAML schema hints file."""
    if not path.exists():
        raise DataError(f"missing hints file: {path}")
    return SchemaHints.from_dict(read_yaml(path))


def _parse_numeric(values: pd.Series, missing: np.ndarray) -> np.ndarray | None:
    """Float column, or None if any non-missing value fails to parse."""
    parsed = pd.to_numeric(values.where(~missing), errors="coerce").to_numpy(dtype=np.float64)
    if np.isnan(parsed[~missing]).any():
        return None
    return parsed


def _sorted_labels(labels: Sequence[str]) -> tuple[str, ...]:
    """Distinct labels, numerically ordered when all parse as numbers."""
    distinct = sorted(set(labels))
    try:
        return tuple(sorted(distinct, key=float))
    except ValueError:
        return tuple(distinct)


def _infer_task(target: pd.Series, numeric: np.ndarray | None) -> str:
    n_distinct = target.nunique()
    if n_distinct <= 2:
        return "binary"
    if numeric is None:
        return "multiclass"
    if n_distinct <= MAX_MULTICLASS and np.all(numeric == np.round(numeric)):
        return "multiclass"
    return "regression"


def load_table(path: Path | str, hints: SchemaHints | Mapping[str, Any] | None = None) -> Dataset:
    """Load a delimited table into a Dataset with an inferred schema.

    A column is categorical if hinted or if any non-missing value fails
    numeric parsing. Target defaults to the last column.
    """
    path = Path(path)
    if not isinstance(hints, SchemaHints):
        hints = SchemaHints.from_dict(hints)
    frame = read_table(path, delimiter=hints.delimiter)
    ds = _frame_to_dataset(frame, hints, str(path))
    logger.debug("loaded %s: %d rows, %d features, task=%s", path, ds.n_rows, ds.n_features, ds.task)
    return ds


def load_split_tables(
    train: Path | str,
    id_test: Path | str,
    ood_test: Path | str,
    hints: SchemaHints | Mapping[str, Any] | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Load three files as one table so category and class codes agree."""
    if not isinstance(hints, SchemaHints):
        hints = SchemaHints.from_dict(hints)
    split_column = hints.split_column or "__split__"
    frames: list[pd.DataFrame] = []
    for tag, p in zip(SPLIT_TAGS, (train, id_test, ood_test)):
        frame = read_table(Path(p), delimiter=hints.delimiter)
        frame.columns = [str(c).strip() for c in frame.columns]
        frame[split_column] = tag
        frames.append(frame)
    if hints.target is None:
        hints = dataclasses.replace(hints, target=[c for c in frames[0].columns if c != split_column][-1])
    names = [list(f.columns) for f in frames]
    if names[1] != names[0] or names[2] != names[0]:
        raise DataError("train, id_test and ood_test files have different headers")
    pooled = pd.concat(frames, ignore_index=True)
    ds = _frame_to_dataset(pooled, dataclasses.replace(hints, split_column=split_column), str(train))
    if hints.split_column is None:
        ds = ds.replace(schema=ds.schema.replace(split_column=None))
    return partition_by_split(ds)


def _frame_to_dataset(frame: pd.DataFrame, hints: SchemaHints, origin: str) -> Dataset:
    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise DataError(f"empty table: {origin}")
    frame = frame.apply(lambda s: s.str.strip())

    target = hints.target or frame.columns[-1]
    if target not in frame.columns:
        raise DataError(f"target column absent: {target!r}")
    for tag_col in (hints.id_column, hints.split_column):
        if tag_col is not None and tag_col not in frame.columns:
            raise DataError(f"column absent: {tag_col!r}")
    for name in hints.categorical:
        if name not in frame.columns:
            raise DataError(f"hinted categorical column absent: {name!r}")

    n = frame.shape[0]
    excluded = {target, hints.id_column, hints.split_column}
    columns: list[Column] = []
    matrix: list[np.ndarray] = []
    categories: dict[str, tuple[str, ...]] = {}
    for name in frame.columns:
        if name in excluded:
            continue
        values = frame[name]
        missing = values.isin(MISSING_TOKENS).to_numpy()
        if missing.all():
            raise DataError(f"all values missing in column {name!r}")
        numeric = None if name in hints.categorical else _parse_numeric(values, missing)
        if numeric is not None:
            columns.append(Column(name, "numeric"))
            matrix.append(numeric)
            continue
        observed = values[~missing]
        cats = tuple(sorted(set(observed)))
        lookup = {c: float(i) for i, c in enumerate(cats)}
        codes = np.array([np.nan if m else lookup[v] for v, m in zip(values, missing)])
        columns.append(Column(name, "categorical"))
        categories[name] = cats
        matrix.append(codes)

    tvalues = frame[target]
    tmissing = tvalues.isin(MISSING_TOKENS).to_numpy()
    if tmissing.all():
        raise DataError(f"all values missing in column {target!r}")
    if tmissing.any():
        rows = np.flatnonzero(tmissing)[:5].tolist()
        raise DataError(f"target column {target!r} has missing values (rows {rows})")
    tnumeric = _parse_numeric(tvalues, tmissing)
    task = hints.task or _infer_task(tvalues, tnumeric)
    target_kind = "numeric" if tnumeric is not None else "categorical"

    classes: tuple[str, ...] = ()
    if task == "regression":
        if tnumeric is None:
            raise DataError(f"regression target {target!r} is not numeric")
        y = tnumeric
    else:
        classes = _sorted_labels(list(tvalues))
        if len(classes) < 2:
            raise DataError(f"target {target!r} has fewer than 2 distinct values")
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.array([lookup[v] for v in tvalues], dtype=np.int64)

    if hints.id_column:
        ids = frame[hints.id_column].to_numpy(dtype=object)
        if len(set(ids)) != n:
            raise DataError(f"id column {hints.id_column!r} has duplicate values")
    else:
        ids = np.array([str(i) for i in range(n)], dtype=object)
    splits = frame[hints.split_column].to_numpy(dtype=object) if hints.split_column else None

    schema = DatasetSchema(
        columns=tuple(columns),
        target=target,
        task=task,
        target_kind=target_kind,
        id_column=hints.id_column,
        split_column=hints.split_column,
        delimiter=hints.delimiter,
    )
    X = np.column_stack(matrix) if matrix else np.empty((n, 0))
    return Dataset(schema=schema, X=X, y=y, ids=ids, categories=categories, classes=classes, splits=splits)


def _format_float(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def save_table(ds: Dataset, path: Path | str) -> None:
    """Write a Dataset in the table format; reload with ``ds.schema.to_hints()``."""
    path = Path(path)
    out: dict[str, list[str]] = {}
    for j, col in enumerate(ds.schema.columns):
        values = ds.X[:, j]
        if col.kind == "categorical":
            cats = ds.categories[col.name]
            out[col.name] = ["" if np.isnan(v) else cats[int(v)] for v in values]
        else:
            out[col.name] = [_format_float(v) for v in values]
    if ds.is_classification:
        out[ds.schema.target] = [ds.classes[int(c)] for c in ds.y]
    else:
        out[ds.schema.target] = [_format_float(v) for v in ds.y]
    out[ds.schema.id_column or "sample_id"] = [str(i) for i in ds.ids]
    if ds.schema.split_column and ds.splits is not None:
        out[ds.schema.split_column] = [str(s) for s in ds.splits]
    write_table_atomic(path, pd.DataFrame(out, dtype=str), delimiter=ds.schema.delimiter)


def partition_by_split(ds: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Split a dataset on its split tags into (train, id_test, ood_test)."""
    if ds.splits is None:
        raise DataError("dataset has no split column")
    parts = []
    for tag in SPLIT_TAGS:
        idx = np.flatnonzero(ds.splits == tag)
        if idx.size == 0:
            raise DataError(f"split {tag!r} is empty")
        parts.append(ds.take(idx))
    return parts[0], parts[1], parts[2]


# ── Apportionment & sampling ──────────────────────────────────


def apportion(counts: Sequence[int], total: int) -> np.ndarray:
    """Largest-remainder apportionment of *total* proportional to *counts*.

    Ties in the remainder go to the earlier stratum. No stratum receives
    more than its count.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n == 0:
        return np.zeros_like(counts)
    exact = counts * total / n
    quotas = np.floor(exact).astype(np.int64)
    leftover = int(total - quotas.sum())
    remainders = exact - quotas
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        quotas[i] += 1
    return np.minimum(quotas, counts)


def _strata(ds: Dataset, by: str) -> tuple[list[Any], list[np.ndarray]]:
    if by not in STRATIFY_MODES:
        raise DataError(f"invalid stratification mode: {by!r}")
    splits = ds.splits if ds.splits is not None else np.full(ds.n_rows, "", dtype=object)
    keys: list[tuple[Any, ...]] = []
    for i in range(ds.n_rows):
        parts: list[Any] = []
        if ds.is_classification and by in ("class_split", "class"):
            parts.append(int(ds.y[i]))
        if by in ("class_split", "split") or not ds.is_classification:
            parts.append(str(splits[i]))
        keys.append(tuple(parts))
    distinct = sorted(set(keys))
    members = {k: [] for k in distinct}
    for i, k in enumerate(keys):
        members[k].append(i)
    return distinct, [np.asarray(members[k], dtype=np.int64) for k in distinct]


def stratified_subsample(ds: Dataset, cap: int, seed: int, by: str = "class_split") -> Dataset:
    """Subsample to exactly *cap* rows preserving stratum shares.

    Strata are (class x split tag) for classification and split tag for
    regression; *by* switches to class-only or split-only strata. Row
    order is preserved.
    """
    if cap < 1:
        raise DataError(f"cap must be positive, got {cap}")
    if ds.n_rows <= cap:
        return ds
    keys, members = _strata(ds, by)
    if cap < len(keys):
        raise DataError(f"cap {cap} is smaller than the number of strata ({len(keys)})")
    quotas = apportion([m.size for m in members], cap)
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(m, size=int(q), replace=False) for m, q in zip(members, quotas)]
    idx = np.sort(np.concatenate(chosen))
    return ds.take(idx)


def split_holdout(
    ds: Dataset, test_fraction: float, seed: int, stratify: bool = True
) -> tuple[Dataset, Dataset]:
    """Seeded disjoint train/test partition, stratified by class when flagged."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n = ds.n_rows
    n_test = int(round(n * test_fraction))
    rng = np.random.default_rng(seed)
    if stratify and ds.is_classification:
        codes = ds.class_codes()
        members = [np.flatnonzero(ds.y == c) for c in codes]
        quotas = apportion([m.size for m in members], n_test)
        test_idx = np.concatenate([rng.choice(m, size=int(q), replace=False) for m, q in zip(members, quotas)])
    else:
        test_idx = rng.permutation(n)[:n_test]
    test_mask = np.zeros(n, dtype=bool)
    test_mask[test_idx] = True
    if test_mask.all() or not test_mask.any():
        raise DataError(f"split of {n} rows at fraction {test_fraction} leaves an empty part")
    return ds.take(np.flatnonzero(~test_mask)), ds.take(np.flatnonzero(test_mask))


# ── Standardization & imputation ──────────────────────────────


def fit_standardizer(train: Dataset) -> Standardizer:
    """Train statistics with population stddev; zero-variance columns get 1."""
    if train.n_rows == 0:
        raise DataError("cannot fit statistics on an empty dataset")
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    modes: dict[str, int] = {}
    constant: set[str] = set()
    for j, col in enumerate(train.schema.columns):
        values = train.X[:, j]
        observed = values[~np.isnan(values)]
        if col.kind == "categorical":
            modes[col.name] = int(np.bincount(observed.astype(np.int64)).argmax()) if observed.size else 0
            continue
        if observed.size == 0:
            means[col.name], stds[col.name] = 0.0, 1.0
            constant.add(col.name)
            continue
        mean = float(observed.mean())
        std = float(observed.std())
        if not std > 0:
            std = 1.0
            constant.add(col.name)
        means[col.name], stds[col.name] = mean, std
    return Standardizer(
        columns=train.schema.columns, means=means, stds=stds, modes=modes, constant=frozenset(constant)
    )


def _check_columns(stats: Standardizer, ds: Dataset) -> None:
    if stats.columns != ds.schema.columns:
        raise DataError("schema mismatch between fitted statistics and dataset")


def apply_standardizer(stats: Standardizer, ds: Dataset) -> Dataset:
    """Map numeric columns to (x - mean) / stddev; categorical unchanged."""
    _check_columns(stats, ds)
    X = ds.X.copy()
    for j, col in enumerate(ds.schema.columns):
        if col.kind == "numeric":
            X[:, j] = (X[:, j] - stats.means[col.name]) / stats.stds[col.name]
    return ds.with_features(X)


def fit_imputer(train: Dataset) -> Imputer:
    return Imputer(stats=fit_standardizer(train))


def _fill_value(stats: Standardizer, name: str, kind: str) -> float:
    return float(stats.modes[name]) if kind == "categorical" else stats.means[name]


def impute(model: Imputer, ds: Dataset, missing_columns: Sequence[str]) -> Dataset:
    """Replace each named column entirely with the train mean or mode."""
    if not missing_columns:
        return ds
    names = ds.schema.feature_names
    for name in missing_columns:
        if name not in model.stats.means and name not in model.stats.modes:
            raise DataError(f"column not in train schema: {name!r}")
    _check_columns(model.stats, ds)
    X = ds.X.copy()
    for name in missing_columns:
        j = names.index(name)
        X[:, j] = _fill_value(model.stats, name, ds.schema.columns[j].kind)
    return ds.with_features(X)


def fill_missing(model: Imputer, ds: Dataset) -> Dataset:
    """Fill individual missing cells with train statistics."""
    _check_columns(model.stats, ds)
    holes = np.isnan(ds.X)
    if not holes.any():
        return ds
    X = ds.X.copy()
    for j, col in enumerate(ds.schema.columns):
        X[holes[:, j], j] = _fill_value(model.stats, col.name, col.kind)
    return ds.with_features(X)


def design_matrix(ds: Dataset) -> np.ndarray:
    """Model-facing matrix: numeric columns as-is, categorical one-hot."""
    blocks: list[np.ndarray] = []
    for j, col in enumerate(ds.schema.columns):
        values = ds.X[:, j]
        if col.kind == "numeric":
            blocks.append(values[:, None])
            continue
        n_cats = len(ds.categories[col.name])
        onehot = np.zeros((ds.n_rows, n_cats))
        present = ~np.isnan(values)
        onehot[np.flatnonzero(present), values[present].astype(np.int64)] = 1.0
        blocks.append(onehot)
    if not blocks:
        return np.empty((ds.n_rows, 0))
    return np.hstack(blocks)


def prepare_pair(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Fill missing cells and standardize with statistics from *train* only."""
    imputer = fit_imputer(train)
    filled = [fill_missing(imputer, d) for d in (train, *others)]
    stats = fit_standardizer(filled[0])
    return tuple(apply_standardizer(stats, d) for d in filled)
