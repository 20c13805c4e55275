"""Scalar performance metrics, novelty scoring, performance gaps and
rank aggregation."""

from __future__ import annotations

import warnings
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn import metrics as skm

from core.errors import DataError
from core.models import (
    LOWER_IS_BETTER,
    OBJECTIVES,
    NOVELTY_INTERVALS,
    EncReport,
    EncRun,
    EncRunResult,
    NoveltyConfig,
    PredictionSet,
)


def _pair(y_true: Sequence, y_pred: Sequence) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(y_true), np.asarray(y_pred)
    if a.size == 0:
        raise DataError("empty input")
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


# ── Classification & regression scores ────────────────────────


def accuracy(y_true: Sequence, y_pred: Sequence) -> float:
    a, b = _pair(y_true, y_pred)
    return float(skm.accuracy_score(a, b))


def balanced_accuracy(y_true: Sequence, y_pred: Sequence) -> float:
    """Unweighted mean recall over the classes present in y_true."""
    a, b = _pair(y_true, y_pred)
    with warnings.catch_warnings():
        # classes predicted but absent from y_true are ignored
        warnings.simplefilter("ignore", UserWarning)
        return float(skm.balanced_accuracy_score(a, b))


def f1(y_true: Sequence, y_pred: Sequence, averaging: str = "macro", positive: int = 1) -> float:
    """Binary F1 for *positive*, or unweighted macro mean; undefined parts count 0."""
    a, b = _pair(y_true, y_pred)
    if averaging == "binary":
        if len(set(a.tolist()) | set(b.tolist()) | {positive}) > 2:
            raise DataError("binary F1 requires at most 2 classes")
        return float(skm.f1_score(a, b, average="binary", pos_label=positive, zero_division=0))
    if averaging == "macro":
        return float(skm.f1_score(a, b, average="macro", zero_division=0))
    raise DataError(f"invalid F1 averaging: {averaging!r}")


def _binary_scores(y_true: Sequence, scores: Sequence) -> tuple[np.ndarray, np.ndarray]:
    y, s = _pair(y_true, scores)
    y = y.astype(np.int64)
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise DataError("y_true must be binary (0/1)")
    if y.min() == y.max():
        raise DataError("undefined AUC: y_true holds a single class")
    return y, s.astype(np.float64)


def roc_auc(y_true: Sequence, scores: Sequence) -> float:
    """Mann-Whitney statistic; tied positive/negative pairs count one half."""
    y, s = _binary_scores(y_true, scores)
    return float(skm.roc_auc_score(y, s))


def aupr(y_true: Sequence, scores: Sequence) -> float:
    """Step-wise precision-recall area over every distinct threshold."""
    y, s = _binary_scores(y_true, scores)
    return float(skm.average_precision_score(y, s))


def roc_auc_ovr(y_true: Sequence, probs: np.ndarray, class_order: Sequence[int]) -> float:
    """Macro one-vs-rest ROC-AUC over classes present in y_true."""
    y = np.asarray(y_true)
    P = np.asarray(probs, dtype=np.float64)
    present = [c for c in class_order if (y == c).any()]
    if len(present) < 2:
        raise DataError("undefined AUC: y_true holds a single class")
    aucs = []
    for c in present:
        col = list(class_order).index(c)
        aucs.append(roc_auc((y == c).astype(np.int64), P[:, col]))
    return float(np.mean(aucs))


def rmse(y_true: Sequence, y_pred: Sequence) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)))


def performance_gap(metric_0: float, metric_i: float, mode: str = "absolute") -> float:
    """metric_i - metric_0 (absolute) or (metric_i - metric_0) / metric_0 (relative)."""
    if mode == "absolute":
        return float(metric_i - metric_0)
    if mode == "relative":
        if metric_0 == 0:
            raise DataError("relative performance gap undefined for metric_0 = 0")
        return float((metric_i - metric_0) / metric_0)
    raise DataError(f"invalid gap mode: {mode!r}")


def score_objective(objective: str, y_true: np.ndarray, preds: PredictionSet) -> float:
    """Evaluate one objective on an aligned prediction set."""
    if objective not in OBJECTIVES:
        raise DataError(f"unknown objective: {objective!r}")
    if objective == "rmse":
        if preds.kind != "regression":
            raise DataError("rmse applies to regression only")
        return rmse(y_true, preds.values)
    if preds.kind != "class_probs":
        raise DataError(f"{objective} applies to classification only")
    binary = len(preds.class_order) == 2 and set(np.unique(y_true).tolist()) <= set(preds.class_order)
    y_pred = preds.predicted_codes()
    if objective == "accuracy":
        return accuracy(y_true, y_pred)
    if objective == "balanced_accuracy":
        return balanced_accuracy(y_true, y_pred)
    if objective == "f1":
        if binary:
            return f1(y_true, y_pred, averaging="binary", positive=preds.class_order[1])
        return f1(y_true, y_pred, averaging="macro")
    if binary:
        positive = (np.asarray(y_true) == preds.class_order[1]).astype(np.int64)
        scores = preds.probs[:, 1]
        return roc_auc(positive, scores) if objective == "roc_auc" else aupr(positive, scores)
    if objective == "roc_auc":
        return roc_auc_ovr(y_true, preds.probs, preds.class_order)
    raise DataError("aupr applies to binary tasks only")


# ── Novelty detection ─────────────────────────────────────────


def novelty_score(preds: PredictionSet) -> np.ndarray:
    """1 - max class probability; higher means more novel."""
    if preds.kind != "class_probs":
        raise DataError("novelty scores need class probabilities")
    return 1.0 - preds.max_prob()


def uncertainty_proportion(preds: PredictionSet, cfg: NoveltyConfig = NoveltyConfig()) -> float:
    """Fraction of rows whose max probability lies in [theta_min, theta_max]."""
    if preds.kind != "class_probs":
        raise DataError("uncertainty proportion needs class probabilities")
    if len(preds) == 0:
        return 0.0
    m = preds.max_prob()
    return float(np.mean((m >= cfg.theta_min) & (m <= cfg.theta_max)))


def _subset(preds: PredictionSet, mask: np.ndarray) -> PredictionSet:
    return PredictionSet(
        sample_ids=preds.sample_ids[mask], kind=preds.kind, probs=preds.probs[mask], class_order=preds.class_order
    )


def enc_evaluate(
    runs: Iterable[tuple[EncRun, PredictionSet]],
    cfg: NoveltyConfig = NoveltyConfig(),
    intervals: Sequence[NoveltyConfig] = NOVELTY_INTERVALS,
) -> EncReport:
    """Per-run ROC-AUC/AUPR on novelty scores plus uncertainty proportions.

    The report mean is the unweighted mean over runs. *cfg* is the hard
    interval rule whose decisions are scored as interval_roc_auc.
    """
    report = EncReport()
    for run, preds in runs:
        detection = run.detection_test
        aligned = preds.aligned_to(detection.ids)
        labels = detection.y
        scores = novelty_score(aligned)
        m = aligned.max_prob()
        decisions = ((m >= cfg.theta_min) & (m <= cfg.theta_max)).astype(np.float64)
        novel = labels == 1
        report.runs.append(EncRunResult(
            held_out_label=run.held_out_label,
            roc_auc=roc_auc(labels, scores),
            aupr=aupr(labels, scores),
            interval_roc_auc=roc_auc(labels, decisions),
            uncertainty_novel={iv.label(): uncertainty_proportion(_subset(aligned, novel), iv) for iv in intervals},
            uncertainty_all={iv.label(): uncertainty_proportion(aligned, iv) for iv in intervals},
        ))
    if not report.runs:
        raise DataError("no runs to evaluate")
    keys = ["roc_auc", "aupr", "interval_roc_auc"]
    report.mean = {k: float(np.mean([getattr(r, k) for r in report.runs])) for k in keys}
    for iv in intervals:
        report.mean[f"uncertainty_novel{iv.label()}"] = float(
            np.mean([r.uncertainty_novel[iv.label()] for r in report.runs])
        )
        report.mean[f"uncertainty_all{iv.label()}"] = float(
            np.mean([r.uncertainty_all[iv.label()] for r in report.runs])
        )
    return report


# ── Rank aggregation ──────────────────────────────────────────


def rank_cells(results: np.ndarray, higher_is_better: Sequence[bool]) -> np.ndarray:
    """Per-cell ranks (1 = best, ties share the mean rank); shape models x cells."""
    R = np.asarray(results, dtype=np.float64)
    if R.ndim != 2:
        raise DataError("results must be a models x cells matrix")
    if len(higher_is_better) != R.shape[1]:
        raise DataError(f"{len(higher_is_better)} direction flags for {R.shape[1]} cells")
    if np.isnan(R).any():
        rows, cols = np.nonzero(np.isnan(R))
        raise DataError(f"missing cells at (model, cell) {list(zip(rows.tolist(), cols.tolist()))[:5]}")
    ranks = np.empty_like(R)
    for j, higher in enumerate(higher_is_better):
        column = -R[:, j] if higher else R[:, j]
        ranks[:, j] = rankdata(column, method="average")
    return ranks


def rank_table(results: np.ndarray, higher_is_better: Sequence[bool]) -> np.ndarray:
    """Mean rank per model across all cells."""
    return rank_cells(results, higher_is_better).mean(axis=1)


def rank_table_grouped(
    results: np.ndarray,
    higher_is_better: Sequence[bool],
    groups: Sequence[str],
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Two-level averaging: mean rank per group of cells, then mean over groups.

    Returns ({group: per-model mean rank}, overall per-model rank).
    """
    ranks = rank_cells(results, higher_is_better)
    if len(groups) != ranks.shape[1]:
        raise DataError("one group label per cell is required")
    per_group: dict[str, np.ndarray] = {}
    for g in dict.fromkeys(groups):
        cols = [j for j, name in enumerate(groups) if name == g]
        per_group[g] = ranks[:, cols].mean(axis=1)
    overall = np.mean(np.vstack(list(per_group.values())), axis=0)
    return per_group, overall


def higher_is_better(metric: str) -> bool:
    return metric not in LOWER_IS_BETTER
