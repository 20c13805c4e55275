"""Open-environment scenario generation.

Materializes the four challenges as derived datasets: leave-one-class-out
novelty runs, decremental/incremental feature shift, and capped
train / ID-test / OOD-test splits. Every generator is a pure function of
(input dataset, parameters, seed).
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from core.data import (
    apportion,
    fit_imputer,
    impute,
    load_split_tables,
    load_table,
    partition_by_split,
    save_table,
    split_holdout,
    stratified_subsample,
)
from core.errors import DataError
from core.fileio import read_yaml, write_yaml_atomic
from core.models import (
    CddScenario,
    Column,
    Dataset,
    DatasetSchema,
    EncRun,
    FeatureShiftSpec,
    SPLIT_TAGS,
    ShiftedTest,
)

logger = logging.getLogger(__name__)

ENC_HOLDOUT_FRACTION = 0.2
ENC_MAX_HOLDOUT_FRACTION = 0.5
NEW_FEATURE_PREFIX = "new_feature_"


# ── Emerging new classes ──────────────────────────────────────


def _detection_dataset(base: Dataset, rows: np.ndarray, novelty: np.ndarray) -> Dataset:
    """Rows of *base* re-targeted to binary novelty labels."""
    part = base.take(rows)
    schema = base.schema.replace(target="novel", task="binary", target_kind="numeric")
    return part.replace(schema=schema, y=novelty, classes=("0", "1"), splits=None)


def enc_generate(
    ds: Dataset, seed: int, holdout_fraction: float = ENC_HOLDOUT_FRACTION
) -> list[EncRun]:
    """One run per class, each excluding that class from training.

    Known negatives come from a stratified holdout of the remaining
    classes (at least *holdout_fraction*, at most half of them) that never
    overlaps the training rows. The detection set is balanced:
    n_novel = min(size of the held-out class, holdout size) rows of each kind.
    """
    if ds.task != "multiclass":
        raise DataError(f"emerging-class runs need a multiclass dataset, got task={ds.task}")
    codes = ds.class_codes()
    if codes.size < 3:
        raise DataError(f"emerging-class runs need at least 3 classes, got {codes.size}")
    counts = {int(c): int((ds.y == c).sum()) for c in codes}
    for c, count in counts.items():
        if count < 2:
            raise DataError(
                f"class {ds.classes[c]!r} has {count} sample(s); need at least 2 for train and detection membership"
            )

    position = {str(i): k for k, i in enumerate(ds.ids)}
    runs: list[EncRun] = []
    for c in codes:
        c = int(c)
        run_seed = int(np.random.SeedSequence([seed, c]).generate_state(1)[0])
        rng = np.random.default_rng(run_seed)
        novel_idx = np.flatnonzero(ds.y == c)
        known_idx = np.flatnonzero(ds.y != c)
        known = ds.take(known_idx)
        # grow the holdout so it can balance the whole held-out class, up to half the known rows
        fraction = min(max(holdout_fraction, novel_idx.size / known_idx.size), ENC_MAX_HOLDOUT_FRACTION)
        train, holdout = split_holdout(known, fraction, seed=run_seed, stratify=True)
        holdout_rows = np.array([position[str(i)] for i in holdout.ids], dtype=np.int64)

        n_novel = min(novel_idx.size, holdout_rows.size)
        if n_novel < 1:
            raise DataError(f"class {ds.classes[c]!r}: no known rows left for detection")
        novel_rows = np.sort(rng.choice(novel_idx, size=n_novel, replace=False))
        known_rows = np.sort(rng.choice(holdout_rows, size=n_novel, replace=False))
        rows = np.concatenate([novel_rows, known_rows])
        novelty = np.concatenate([np.ones(n_novel, dtype=np.int64), np.zeros(n_novel, dtype=np.int64)])
        order = np.argsort(rows, kind="stable")
        detection = _detection_dataset(ds, rows[order], novelty[order])

        runs.append(EncRun(
            held_out_class=c,
            held_out_label=ds.classes[c],
            train=train,
            detection_test=detection,
            seed=run_seed,
            n_novel=n_novel,
        ))
        logger.debug("enc run class=%s train=%d detection=%d", ds.classes[c], train.n_rows, detection.n_rows)
    return runs


# ── Feature shift ─────────────────────────────────────────────


def n_shifted(level: float, n_features: int) -> int:
    """ceil(level * m), robust to float noise such as 0.6 * 5."""
    return int(math.ceil(round(level * n_features, 9)))


def decremental_shift(
    train: Dataset, test: Dataset, level: float, seed: int
) -> tuple[Dataset, FeatureShiftSpec]:
    """Impute ceil(level * m) randomly chosen feature columns of *test*.

    The draw is a seeded permutation prefix, so for a fixed seed the
    removed sets are nested across levels. The schema is unchanged.
    """
    if not 0.0 <= level <= 1.0:
        raise DataError(f"shift level must lie in [0, 1], got {level}")
    if not train.schema.same_features(test.schema):
        raise DataError("train and test feature schemas differ")
    m = test.n_features
    n_remove = n_shifted(level, m)
    if n_remove == 0:
        return test, FeatureShiftSpec(level=level, removed=(), mode="decremental", seed=seed)
    perm = np.random.default_rng(seed).permutation(m)
    chosen = sorted(perm[:n_remove].tolist())
    removed = tuple(test.feature_names[j] for j in chosen)
    shifted = impute(fit_imputer(train), test, removed)
    return shifted, FeatureShiftSpec(level=level, removed=removed, mode="decremental", seed=seed)


def _fresh_names(existing: set[str], n_new: int) -> tuple[str, ...]:
    names: list[str] = []
    taken = set(existing)
    for i in range(1, n_new + 1):
        name = f"{NEW_FEATURE_PREFIX}{i}"
        suffix = 1
        while name in taken:
            name = f"{NEW_FEATURE_PREFIX}{i}_{suffix}"
            suffix += 1
        taken.add(name)
        names.append(name)
    return tuple(names)


def incremental_shift(test: Dataset, n_new: int, seed: int) -> Dataset:
    """Append *n_new* standard-normal numeric columns with fresh names."""
    return incremental_shift_with_spec(test, n_new, seed).test


def incremental_shift_with_spec(test: Dataset, n_new: int, seed: int) -> ShiftedTest:
    if n_new < 1:
        raise DataError(f"n_new must be >= 1, got {n_new}")
    existing = set(test.feature_names) | {test.schema.target}
    existing |= {c for c in (test.schema.id_column, test.schema.split_column) if c}
    names = _fresh_names(existing, n_new)
    draws = np.random.default_rng(seed).standard_normal((test.n_rows, n_new))
    X = np.hstack([test.X, draws])
    columns = test.schema.columns + tuple(Column(n, "numeric") for n in names)
    spec = FeatureShiftSpec(level=0.0, mode="incremental", n_new=n_new, added=names, seed=seed)
    return ShiftedTest(test=test.with_features(X, columns=columns), spec=spec)


def align_features(train_schema: DatasetSchema, test: Dataset) -> Dataset:
    """Restrict *test* to the training feature columns, in training order."""
    names = test.feature_names
    idx: list[int] = []
    for col in train_schema.columns:
        if col.name not in names:
            raise DataError(f"train feature column missing from test: {col.name!r}")
        j = names.index(col.name)
        if test.schema.columns[j].kind != col.kind:
            raise DataError(f"column {col.name!r} changed kind from {col.kind} to {test.schema.columns[j].kind}")
        idx.append(j)
    if idx == list(range(len(names))):
        return test
    categories = {c.name: test.categories[c.name] for c in train_schema.columns if c.kind == "categorical"}
    return test.with_features(test.X[:, idx], columns=train_schema.columns, categories=categories)


# ── Changing distributions ────────────────────────────────────


def cdd_prepare(
    train: Dataset,
    id_test: Dataset,
    ood_test: Dataset,
    cap: int,
    seed: int,
    source_domain: str = "source",
    target_domain: str = "target",
) -> CddScenario:
    """Cap the pooled splits at *cap* rows with per-split proportional quotas."""
    if not (train.schema.same_features(id_test.schema) and train.schema.same_features(ood_test.schema)):
        raise DataError("schema mismatch across train / id_test / ood_test")
    if source_domain == target_domain:
        raise DataError("ood_test must carry a domain tag distinct from train")
    parts = [train, id_test, ood_test]
    sizes = [p.n_rows for p in parts]
    total = sum(sizes)
    if cap >= total:
        quotas = sizes
    else:
        quotas = apportion(sizes, cap).tolist()
    for name, part, quota in zip(SPLIT_TAGS, parts, quotas):
        # Gaussian class fits downstream need two rows per class
        need = 2 * part.class_codes().size if part.is_classification else 1
        if quota < min(need, part.n_rows):
            raise DataError(
                f"cap={cap} leaves {name} {quota} of {part.n_rows} rows; it needs at least {need}, raise the cap"
            )
    seq = np.random.SeedSequence(seed).generate_state(3)
    capped = [
        stratified_subsample(p, int(q), seed=int(s), by="class") if q < p.n_rows else p
        for p, q, s in zip(parts, quotas, seq)
    ]
    domains = [source_domain, source_domain, target_domain]
    tagged = [p.replace(domain=d) for p, d in zip(capped, domains)]
    provenance = (
        f"cdd cap={cap} seed={seed} sizes={sizes[0]}/{sizes[1]}/{sizes[2]}"
        f" -> {tagged[0].n_rows}/{tagged[1].n_rows}/{tagged[2].n_rows}"
    )
    return CddScenario(
        train=tagged[0], id_test=tagged[1], ood_test=tagged[2], provenance=provenance, seed=seed, cap=cap
    )


# ── Export ────────────────────────────────────────────────────


def export_scenario(
    scenario: EncRun | ShiftedTest | CddScenario,
    path: Path | str,
    source: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Write one table per dataset part plus ``manifest.yaml``.

    *source* ({"dataset": path, "hints": {...}, plus generation
    parameters}) is recorded so ``replay_manifest`` can regenerate the
    scenario bit-exactly.
    """
    out = Path(path)
    manifest: dict[str, Any] = {}
    parts: dict[str, Dataset] = {}
    if isinstance(scenario, EncRun):
        manifest.update({"kind": "enc", **scenario.to_dict()})
        parts = {"train": scenario.train, "detection_test": scenario.detection_test}
        classes = scenario.train.classes
    elif isinstance(scenario, ShiftedTest):
        manifest.update({"kind": scenario.spec.mode, **scenario.spec.to_dict()})
        parts = {"test": scenario.test}
        classes = scenario.test.classes
    elif isinstance(scenario, CddScenario):
        manifest.update({
            "kind": "cdd",
            "seed": scenario.seed,
            "cap": scenario.cap,
            "split_sizes": scenario.split_sizes(),
            "provenance": scenario.provenance,
            "domains": {
                "train": scenario.train.domain,
                "id_test": scenario.id_test.domain,
                "ood_test": scenario.ood_test.domain,
            },
        })
        parts = {"train": scenario.train, "id_test": scenario.id_test, "ood_test": scenario.ood_test}
        classes = scenario.train.classes
    else:
        raise DataError(f"cannot export object of type {type(scenario).__name__}")

    files: dict[str, str] = {}
    schemas: dict[str, Any] = {}
    for name, part in parts.items():
        fname = f"{name}.csv"
        save_table(part, out / fname)
        files[name] = fname
        schemas[name] = part.schema.to_hints()
    manifest["classes"] = list(classes)
    manifest["files"] = files
    manifest["schemas"] = schemas
    if source:
        manifest["source"] = dict(source)
    write_yaml_atomic(out / "manifest.yaml", manifest)
    logger.info("exported %s scenario to %s", manifest["kind"], out)
    return manifest


def load_manifest(path: Path | str) -> dict[str, Any]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.yaml"
    data = read_yaml(p)
    if not data:
        raise DataError(f"missing or empty manifest: {p}")
    return data


def load_scenario_part(manifest_dir: Path | str, part: str) -> Dataset:
    """Reload one exported part using the schema recorded in the manifest."""
    d = Path(manifest_dir)
    manifest = load_manifest(d)
    if part not in manifest.get("files", {}):
        raise DataError(f"manifest has no part {part!r}")
    return load_table(d / manifest["files"][part], manifest["schemas"][part])


def _replay_holdout(ds: Dataset, source: Mapping[str, Any], seed: int) -> tuple[Dataset, Dataset]:
    if source.get("use_split_tags") and ds.splits is not None:
        train, id_test, _ = partition_by_split(ds)
        return train, id_test
    return split_holdout(
        ds, float(source.get("test_fraction", 0.2)), int(source.get("split_seed", seed)),
        stratify=ds.is_classification,
    )


def replay_manifest(path: Path | str, out: Path | str) -> dict[str, Any]:
    """Regenerate an exported scenario from its manifest into *out*."""
    manifest = load_manifest(path)
    source = manifest.get("source")
    if not source or "dataset" not in source:
        raise DataError("manifest carries no source dataset; cannot replay")
    kind = manifest["kind"]
    seed = int(manifest["seed"])
    ds = load_table(source["dataset"], source.get("hints"))
    if kind == "enc":
        runs = enc_generate(ds, int(source.get("seed", seed)), float(source.get("holdout_fraction", ENC_HOLDOUT_FRACTION)))
        run = next((r for r in runs if r.held_out_label == manifest["held_out_label"]), None)
        if run is None:
            raise DataError(f"class {manifest['held_out_label']!r} not found in source")
        return export_scenario(run, out, source)
    if kind == "decremental":
        train, test = _replay_holdout(ds, source, seed)
        shifted, spec = decremental_shift(train, test, float(manifest["level"]), seed)
        return export_scenario(ShiftedTest(shifted, spec), out, source)
    if kind == "incremental":
        _, test = _replay_holdout(ds, source, seed)
        return export_scenario(incremental_shift_with_spec(test, int(manifest["n_new"]), seed), out, source)
    if kind == "cdd":
        if source.get("id_test") and source.get("ood_test"):
            train, id_test, ood_test = load_split_tables(
                source["dataset"], source["id_test"], source["ood_test"], source.get("hints")
            )
        else:
            train, id_test, ood_test = partition_by_split(ds)
        scenario = cdd_prepare(train, id_test, ood_test, int(manifest["cap"]), seed)
        return export_scenario(scenario, out, source)
    raise DataError(f"unknown scenario kind in manifest: {kind!r}")
