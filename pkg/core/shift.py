"""Distribution-shift statistics.

Covariate shift is measured with an optimal-transport dataset distance
whose label cost is the Wasserstein distance between Gaussian fits of the
class conditionals. Concept shift is the Frechet distance between Gaussian
fits of classifier activations; label shift is the squared difference of
positive-class rates. The generalization gap of a source-trained model is
split into two covariate terms and one conditional term over a
propensity-trimmed overlap region.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import eigh, lstsq
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from core.baselines import default_loss, knn_fit_arrays, knn_regress, logreg_fit_arrays, logreg_propensity, per_sample_loss
from core.data import design_matrix, prepare_pair, stratified_subsample
from core.errors import ConvergenceError, DataError, OverlapError
from core.models import (
    CddScenario,
    Dataset,
    DisdeReport,
    GaussianSummary,
    LogRegConfig,
    OtddConfig,
    PredictionSet,
    ShiftConfig,
    ShiftProfile,
)

logger = logging.getLogger(__name__)

EIGEN_CLIP = -1e-8
SYMMETRY_TOLERANCE = 1e-8
FDD_LAYER_MODES = ("final", "sum")
SCALING_FACTOR = 0.5
STAGE_ITERATIONS = 100
STAGE_TOLERANCE = 1e-3
POLISH_BELOW = 1e-2
_CHECK_EVERY = 10
_NEWTON_BACKTRACKS = 30


# ── Gaussian summaries ────────────────────────────────────────


def gaussian_summary(X: np.ndarray) -> GaussianSummary:
    """Column means and population covariance, symmetrized and PSD-clipped."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 rows for a covariance, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    if cov.size:
        w, V = eigh(cov)
        if w.min() < 0:
            if w.min() < EIGEN_CLIP:
                logger.debug("clipping covariance eigenvalue %.3e", w.min())
            cov = (V * np.clip(w, 0.0, None)) @ V.T
            cov = 0.5 * (cov + cov.T)
    return GaussianSummary(mean=mean, covariance=cov, n=n)


def _check_symmetric(A: np.ndarray) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.linalg.norm(A)))
    if float(np.linalg.norm(A - A.T)) > SYMMETRY_TOLERANCE * scale:
        raise DataError("matrix is not symmetric")


def spd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, eigenvalues clipped at 0."""
    A = np.asarray(A, dtype=np.float64)
    _check_symmetric(A)
    if A.size == 0:
        return A.copy()
    w, V = eigh(0.5 * (A + A.T))
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (S + S.T)


def _trace_sqrt_product(cov_1: np.ndarray, cov_2: np.ndarray) -> float:
    """Tr sqrt(cov_1 cov_2) through the symmetric form sqrt(S1 cov_2 S1)."""
    s1 = spd_sqrt(cov_1)
    cross = s1 @ cov_2 @ s1
    w = eigh(0.5 * (cross + cross.T), eigvals_only=True)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def gaussian_w2(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between two Gaussians."""
    if g1.dim != g2.dim:
        raise DataError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    mean_term = float(np.sum((g1.mean - g2.mean) ** 2))
    if g1.dim == 0:
        return 0.0
    cov_term = float(np.trace(g1.covariance) + np.trace(g2.covariance))
    cov_term -= 2.0 * _trace_sqrt_product(g1.covariance, g2.covariance)
    return max(mean_term + cov_term, 0.0)


def fdd(emb_train: np.ndarray, emb_test: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two embedding sets."""
    a = np.asarray(emb_train, dtype=np.float64)
    b = np.asarray(emb_test, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    return gaussian_w2(gaussian_summary(a), gaussian_summary(b))


def fdd_layers(
    layers_train: Sequence[np.ndarray] | np.ndarray,
    layers_test: Sequence[np.ndarray] | np.ndarray,
    mode: str = "final",
) -> float:
    """FDD of the final hidden layer, or summed over every hidden layer."""
    if mode not in FDD_LAYER_MODES:
        raise DataError(f"invalid FDD layer mode: {mode!r}")
    if isinstance(layers_train, np.ndarray):
        layers_train = [layers_train]
    if isinstance(layers_test, np.ndarray):
        layers_test = [layers_test]
    if len(layers_train) != len(layers_test) or not layers_train:
        raise DataError("both sides need the same, non-zero number of layers")
    if mode == "final":
        return fdd(layers_train[-1], layers_test[-1])
    return float(sum(fdd(a, b) for a, b in zip(layers_train, layers_test)))


def label_shift(y_train: np.ndarray, y_test: np.ndarray) -> float:
    """(mean(y_train) - mean(y_test))^2 for 0/1 targets."""
    a = np.asarray(y_train)
    b = np.asarray(y_test)
    if a.size == 0 or b.size == 0:
        raise DataError("label shift needs non-empty targets")
    for y in (a, b):
        if not set(np.unique(y).tolist()) <= {0, 1}:
            raise DataError("label shift is defined for binary 0/1 targets only")
    return float((a.mean() - b.mean()) ** 2)


# ── Optimal transport ─────────────────────────────────────────


def _check_weights(w: np.ndarray, name: str) -> None:
    if (w < 0).any():
        raise DataError(f"{name} has negative weights")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise DataError(f"{name} must sum to 1, got {float(w.sum()):.12g}")


def _positive_median(cost: np.ndarray) -> float:
    med = float(np.median(cost))
    if med > 0:
        return med
    positive = cost[cost > 0]
    return float(np.median(positive)) if positive.size else 0.0


def _plan(f: np.ndarray, g: np.ndarray, C: np.ndarray, eps: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp((f[:, None] + g[None, :] - C) / eps)


def _marginal_residual(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    residual = float(np.abs(P.sum(axis=1) - a).sum() + np.abs(P.sum(axis=0) - b).sum())
    return residual if np.isfinite(residual) else np.inf


def _sweep(
    f: np.ndarray, g: np.ndarray, C: np.ndarray, eps: float, log_a: np.ndarray, log_b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
    g = eps * (log_b - logsumexp((f[:, None] - C) / eps, axis=0))
    return f, g


def _newton_step(
    f: np.ndarray, g: np.ndarray, C: np.ndarray, eps: float, a: np.ndarray, b: np.ndarray, residual: float
) -> tuple[np.ndarray, np.ndarray, float] | None:
    """Damped Newton step on the dual potentials.

    The dual Hessian is [[diag(r), P], [P^T, diag(c)]] / eps, singular along
    (1, -1); the minimum-norm solve drops that direction. Returns None when
    no step length lowers the marginal residual.
    """
    P = _plan(f, g, C, eps)
    r, c = P.sum(axis=1), P.sum(axis=0)
    H = np.block([[np.diag(r), P], [P.T, np.diag(c)]])
    step = eps * lstsq(H, np.concatenate([a - r, b - c]))[0]
    if not np.isfinite(step).all():
        return None
    df, dg = step[: a.size], step[a.size:]
    t = 1.0
    for _ in range(_NEWTON_BACKTRACKS):
        f_new, g_new = f + t * df, g + t * dg
        new_residual = _marginal_residual(_plan(f_new, g_new, C, eps), a, b)
        if new_residual < residual:
            return f_new, g_new, new_residual
        t *= 0.5
    return None


def sinkhorn(
    cost: np.ndarray, a: np.ndarray, b: np.ndarray, cfg: OtddConfig = OtddConfig()
) -> tuple[np.ndarray, float]:
    """Entropic OT by log-domain alternating scaling with epsilon scaling.

    Epsilon starts at the largest cost and halves down to the target, the
    potentials carried between stages. At the target, once the marginal
    violation is below POLISH_BELOW, damped Newton steps on the dual finish
    the solve; they count against cfg.max_iterations like sweeps do.

    Returns (coupling, <coupling, cost>). Converged when the L1 marginal
    violation of rows plus columns is at most cfg.tolerance.
    """
    C = np.asarray(cost, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if C.ndim != 2 or C.shape != (a.size, b.size):
        raise DataError(f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if not np.isfinite(C).all():
        raise DataError("cost matrix has non-finite entries")
    _check_weights(a, "a")
    _check_weights(b, "b")

    if not C.any():
        return np.outer(a, b), 0.0
    eps = cfg.entropic_epsilon
    if eps is None:
        eps = cfg.epsilon_scale * _positive_median(C)

    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    it = 0

    stage_eps = max(eps, float(np.abs(C).max()))
    while stage_eps > eps and it < cfg.max_iterations:
        for _ in range(STAGE_ITERATIONS):
            f, g = _sweep(f, g, C, stage_eps, log_a, log_b)
            it += 1
            if it >= cfg.max_iterations:
                break
            if it % _CHECK_EVERY == 0 and _marginal_residual(_plan(f, g, C, stage_eps), a, b) <= STAGE_TOLERANCE:
                break
        if it < cfg.max_iterations:
            stage_eps = max(eps, stage_eps * SCALING_FACTOR)

    residual = np.inf
    polish_below = POLISH_BELOW
    while it < cfg.max_iterations:
        f, g = _sweep(f, g, C, eps, log_a, log_b)
        it += 1
        if it % _CHECK_EVERY and it != cfg.max_iterations:
            continue
        residual = _marginal_residual(_plan(f, g, C, eps), a, b)
        while cfg.tolerance < residual <= polish_below and it < cfg.max_iterations:
            stepped = _newton_step(f, g, C, eps, a, b, residual)
            it += 1
            if stepped is None:
                polish_below = residual * 0.1
                break
            f, g, residual = stepped
        if residual <= cfg.tolerance:
            P = _plan(f, g, C, eps)
            logger.debug("sinkhorn converged in %d iterations (eps=%.4g)", it, eps)
            return P, float(np.sum(P * C))
    residual = _marginal_residual(_plan(f, g, C, stage_eps), a, b)
    raise ConvergenceError("sinkhorn did not converge", residual, cfg.max_iterations)


def _class_summaries(X: np.ndarray, y: np.ndarray, ds: Dataset, side: str) -> dict[int, GaussianSummary]:
    out: dict[int, GaussianSummary] = {}
    for c in np.unique(y):
        rows = X[y == c]
        if rows.shape[0] < 2:
            raise DataError(f"class {ds.classes[int(c)]!r} has {rows.shape[0]} sample(s) in {side}; need >= 2")
        out[int(c)] = gaussian_summary(rows)
    return out


def _capped(ds: Dataset, cap: int, seed: int) -> Dataset:
    if ds.n_rows <= cap:
        return ds
    return stratified_subsample(ds, cap, seed=seed, by="class")


def otdd(ds_a: Dataset, ds_b: Dataset, cfg: OtddConfig = OtddConfig()) -> float:
    """Dataset distance with point cost ||x - x'||^2 + W2(class conditionals).

    Inputs should already be standardized with shared statistics.
    """
    for ds in (ds_a, ds_b):
        if not ds.is_classification:
            raise DataError("dataset distance needs classification datasets")
    if not ds_a.schema.same_features(ds_b.schema):
        raise DataError("dataset distance needs identical feature schemas")
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    a = _capped(ds_a, cfg.subsample_cap, int(seeds[0]))
    b = _capped(ds_b, cfg.subsample_cap, int(seeds[1]))
    Xa, Xb = design_matrix(a), design_matrix(b)
    if not (np.isfinite(Xa).all() and np.isfinite(Xb).all()):
        raise DataError("dataset distance needs complete features; fill missing cells first")

    sa = _class_summaries(Xa, a.y, a, "first dataset")
    sb = _class_summaries(Xb, b.y, b, "second dataset")
    codes_a, codes_b = sorted(sa), sorted(sb)
    W = np.array([[gaussian_w2(sa[ca], sb[cb]) for cb in codes_b] for ca in codes_a])
    ia = np.searchsorted(codes_a, a.y)
    ib = np.searchsorted(codes_b, b.y)
    C = cdist(Xa, Xb, metric="sqeuclidean") + W[np.ix_(ia, ib)]

    if not C.any():
        return 0.0
    wa = np.full(Xa.shape[0], 1.0 / Xa.shape[0])
    wb = np.full(Xb.shape[0], 1.0 / Xb.shape[0])
    _, total = sinkhorn(C, wa, wb, cfg)
    return float(np.sqrt(max(total, 0.0)))


# ── Generalization-gap decomposition ──────────────────────────


def _standardize_pooled(x_p: np.ndarray, x_q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pooled = np.vstack([x_p, x_q])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[~(std > 0)] = 1.0
    return (x_p - mean) / std, (x_q - mean) / std


def disde(
    losses_p: np.ndarray,
    x_p: np.ndarray,
    losses_q: np.ndarray,
    x_q: np.ndarray,
    eta: float = 0.1,
    k: int = 10,
    seed: int = 0,
) -> DisdeReport:
    """Split mean(losses_q) - mean(losses_p) into three terms.

    The overlap region holds pooled points whose domain propensity lies in
    [eta, 1 - eta]. Conditional risks there are k-NN means of each
    domain's losses. term_1 and term_3 carry covariate shift, term_2 the
    conditional shift; the terms telescope exactly to the total gap.
    """
    lp = np.asarray(losses_p, dtype=np.float64)
    lq = np.asarray(losses_q, dtype=np.float64)
    xp = np.asarray(x_p, dtype=np.float64)
    xq = np.asarray(x_q, dtype=np.float64)
    if not 0.0 < eta < 0.5:
        raise DataError(f"eta must lie in (0, 0.5), got {eta}")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if xp.ndim != 2 or xq.ndim != 2 or xp.shape[1] != xq.shape[1]:
        raise DataError(f"feature shapes differ: {xp.shape} vs {xq.shape}")
    if lp.shape != (xp.shape[0],) or lq.shape != (xq.shape[0],):
        raise DataError("losses do not align with feature rows")
    if k > xp.shape[0] or k > xq.shape[0]:
        raise DataError(f"k={k} exceeds a domain size ({xp.shape[0]} source, {xq.shape[0]} target)")

    zp, zq = _standardize_pooled(xp, xq)
    pooled = np.vstack([zp, zq])
    domain = np.concatenate([np.zeros(zp.shape[0]), np.ones(zq.shape[0])])
    classifier = logreg_fit_arrays(pooled, domain, LogRegConfig(seed=seed))
    propensity = logreg_propensity(classifier, pooled)
    inside = (propensity >= eta) & (propensity <= 1.0 - eta)
    if not inside.any():
        hist, edges = np.histogram(propensity, bins=10, range=(0.0, 1.0))
        raise OverlapError(eta, hist.tolist(), edges.tolist())
    overlap = pooled[inside]

    risk_p = knn_regress(knn_fit_arrays(zp, lp, k), overlap)
    risk_q = knn_regress(knn_fit_arrays(zq, lq, k), overlap)
    mean_p, mean_q = float(lp.mean()), float(lq.mean())
    overlap_p, overlap_q = float(risk_p.mean()), float(risk_q.mean())
    report = DisdeReport(
        term_1=overlap_p - mean_p,
        term_2=overlap_q - overlap_p,
        term_3=mean_q - overlap_q,
        total_gap=mean_q - mean_p,
        overlap_fraction=float(inside.mean()),
        eta=eta,
        k_neighbors=k,
        n_p=int(xp.shape[0]),
        n_q=int(xq.shape[0]),
    )
    logger.debug("disde: overlap %.3f, terms %.4g / %.4g / %.4g", report.overlap_fraction,
                 report.term_1, report.term_2, report.term_3)
    return report


# ── Profile ───────────────────────────────────────────────────


def shift_profile(
    scenario: CddScenario,
    embeddings: Mapping[str, np.ndarray | Sequence[np.ndarray]],
    predictions: Mapping[str, PredictionSet],
    cfg: ShiftConfig = ShiftConfig(),
) -> ShiftProfile:
    """Assemble (delta_x, delta_y_given_x, delta_y) for train vs ood_test.

    *embeddings* maps "train" and "ood_test" to hidden activations of a
    source-trained classifier (one matrix or a list of layers).
    *predictions* maps "id_test" and "ood_test" to that classifier's
    outputs; the gap decomposition uses id_test as the source sample.
    """
    for key in ("train", "ood_test"):
        if key not in embeddings:
            raise DataError(f"missing embeddings for {key!r}")
    for key in ("id_test", "ood_test"):
        if key not in predictions:
            raise DataError(f"missing predictions for {key!r}")

    train, id_test, ood_test = prepare_pair(scenario.train, scenario.id_test, scenario.ood_test)
    delta_x = otdd(train, ood_test, cfg.otdd)
    delta_y_given_x = fdd_layers(embeddings["train"], embeddings["ood_test"], cfg.fdd_layers)
    delta_y = label_shift(scenario.train.y, scenario.ood_test.y)

    loss = cfg.loss or default_loss(scenario.train.task)
    losses_p = per_sample_loss(predictions["id_test"], id_test.y, loss, sample_ids=id_test.ids)
    losses_q = per_sample_loss(predictions["ood_test"], ood_test.y, loss, sample_ids=ood_test.ids)
    report = disde(
        losses_p, design_matrix(id_test), losses_q, design_matrix(ood_test),
        eta=cfg.eta, k=cfg.k_neighbors, seed=cfg.seed,
    )
    logger.info("shift profile: dx=%.4g dy|x=%.4g dy=%.4g (%s)", delta_x, delta_y_given_x, delta_y, report.pattern)
    return ShiftProfile(
        delta_x=delta_x,
        delta_y_given_x=delta_y_given_x,
        delta_y=delta_y,
        pattern=report.pattern,
        disde=report,
        config={**cfg.to_dict(), "provenance": scenario.provenance},
    )
