"""Built-in reference models and the external-model file bridge.

k-NN, logistic regression and a one-hidden-layer MLP, all on numpy and
all deterministic per seed. Models fit on a Dataset (through its design
matrix) and predict on a Dataset or a raw matrix. External models take
part through prediction and embedding files.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, log_softmax, softmax

from core.data import design_matrix
from core.errors import ConfigError, DataError, TrainingError
from core.fileio import read_table
from core.models import (
    Dataset,
    KnnModel,
    LogRegConfig,
    LogRegModel,
    MlpConfig,
    MlpModel,
    PredictionSet,
)

logger = logging.getLogger(__name__)

LOSSES = ("zero_one", "log", "squared")
RENORMALIZE_TOLERANCE = 1e-3
_PROB_FLOOR = 1e-15
_KNN_CHUNK = 1024

Features = Dataset | np.ndarray


def _matrix_and_ids(data: Features) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return design_matrix(data), data.ids
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    return X, np.array([str(i) for i in range(X.shape[0])], dtype=object)


def _check_finite(X: np.ndarray) -> None:
    if not np.isfinite(X).all():
        raise DataError("features contain missing or non-finite values; fill them first")


def _id_rank(ids: np.ndarray) -> np.ndarray:
    """Rank of each id, numeric order when every id parses as an integer."""
    keys = [str(i) for i in ids]
    try:
        order = sorted(range(len(keys)), key=lambda i: (int(keys[i]), keys[i]))
    except ValueError:
        order = sorted(range(len(keys)), key=lambda i: keys[i])
    rank = np.empty(len(keys), dtype=np.int64)
    rank[np.asarray(order, dtype=np.int64)] = np.arange(len(keys))
    return rank


# ── k-nearest neighbours ──────────────────────────────────────


def knn_fit(train: Dataset, k: int) -> KnnModel:
    X, ids = _matrix_and_ids(train)
    targets = train.y
    class_order = tuple(int(c) for c in train.class_codes()) if train.is_classification else ()
    return knn_fit_arrays(X, targets, k, train.task, class_order, ids)


def knn_fit_arrays(
    X: np.ndarray,
    targets: np.ndarray,
    k: int,
    task: str = "regression",
    class_order: Sequence[int] = (),
    ids: np.ndarray | None = None,
) -> KnnModel:
    """k-NN over a raw matrix; rows are reordered by sample id for tie-breaking."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the number of training rows ({n})")
    _check_finite(X)
    if ids is None:
        ids = np.array([str(i) for i in range(n)], dtype=object)
    order = np.argsort(_id_rank(ids), kind="stable")
    return KnnModel(
        X=X[order],
        targets=np.asarray(targets)[order],
        k=int(k),
        task=task,
        class_order=tuple(int(c) for c in class_order),
    )


def knn_neighbors(model: KnnModel, X: np.ndarray) -> np.ndarray:
    """Indices of the k nearest stored rows; equal distances go to the smaller id."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.X.shape[1]:
        raise DataError(f"expected {model.X.shape[1]} features, got {X.shape[1]}")
    _check_finite(X)
    out = np.empty((X.shape[0], model.k), dtype=np.int64)
    for start in range(0, X.shape[0], _KNN_CHUNK):
        d = cdist(X[start:start + _KNN_CHUNK], model.X, metric="sqeuclidean")
        out[start:start + _KNN_CHUNK] = np.argsort(d, axis=1, kind="stable")[:, : model.k]
    return out


def knn_predict_proba(model: KnnModel, data: Features) -> PredictionSet:
    """Neighbour vote fractions (classification) or neighbour mean (regression)."""
    X, ids = _matrix_and_ids(data)
    nn = knn_neighbors(model, X)
    votes = model.targets[nn]
    if model.task == "regression":
        return PredictionSet(sample_ids=ids, kind="regression", values=votes.astype(np.float64).mean(axis=1))
    probs = np.stack([(votes == c).mean(axis=1) for c in model.class_order], axis=1)
    return PredictionSet(sample_ids=ids, kind="class_probs", probs=probs, class_order=model.class_order)


def knn_regress(model: KnnModel, X: np.ndarray) -> np.ndarray:
    """Neighbour means of the stored targets for a raw matrix."""
    nn = knn_neighbors(model, X)
    return model.targets[nn].astype(np.float64).mean(axis=1)


# ── Logistic regression ───────────────────────────────────────


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def logreg_fit(train: Dataset, config: LogRegConfig = LogRegConfig()) -> LogRegModel:
    if not train.is_classification:
        raise DataError("logistic regression needs a binary target, got a regression task")
    codes = train.class_codes()
    if codes.size != 2:
        raise DataError(f"logistic regression needs exactly 2 classes, got {codes.size}")
    X, _ = _matrix_and_ids(train)
    y = (train.y == codes[1]).astype(np.float64)
    return logreg_fit_arrays(X, y, config, class_order=(int(codes[0]), int(codes[1])))


def logreg_fit_arrays(
    X: np.ndarray,
    y: np.ndarray,
    config: LogRegConfig = LogRegConfig(),
    class_order: tuple[int, int] = (0, 1),
) -> LogRegModel:
    """Full-batch gradient descent on mean log loss from zero weights.

    Stops once the gradient norm is at most config.tolerance or after
    config.max_epochs. The default step is 1/L with L the Lipschitz
    constant of the gradient, so the loss never increases.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not set(np.unique(y).tolist()) <= {0.0, 1.0}:
        raise DataError("logistic regression targets must be 0/1")
    _check_finite(X)
    A = _with_bias(X)
    n = A.shape[0]
    if config.learning_rate is None:
        lipschitz = 0.25 * float(np.linalg.eigvalsh(A.T @ A / n).max())
        lr = 1.0 / lipschitz if lipschitz > 0 else 1.0
    else:
        lr = float(config.learning_rate)

    w = np.zeros(A.shape[1])
    history: list[float] = []
    epochs = 0
    for epoch in range(config.max_epochs):
        z = A @ w
        # log(1 + e^z) - y z, written stably
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        if not np.isfinite(loss):
            raise TrainingError("non-finite logistic loss", epoch)
        history.append(loss)
        grad = A.T @ (expit(z) - y) / n
        if np.linalg.norm(grad) <= config.tolerance:
            break
        w -= lr * grad
        epochs = epoch + 1
    logger.debug("logreg: %d epochs, final loss %.6g", epochs, history[-1] if history else float("nan"))
    return LogRegModel(
        weights=w[:-1].copy(),
        bias=float(w[-1]),
        config=config,
        class_order=class_order,
        epochs_run=epochs,
        loss_history=tuple(history),
    )


def logreg_gradient(model: LogRegModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean log loss at the fitted parameters (weights then bias)."""
    A = _with_bias(np.asarray(X, dtype=np.float64))
    w = np.append(model.weights, model.bias)
    return A.T @ (expit(A @ w) - np.asarray(y, dtype=np.float64)) / A.shape[0]


def logreg_propensity(model: LogRegModel, X: np.ndarray) -> np.ndarray:
    """P(class_order[1] | x) for a raw matrix."""
    X = np.asarray(X, dtype=np.float64)
    return expit(X @ model.weights + model.bias)


def logreg_predict_proba(model: LogRegModel, data: Features) -> PredictionSet:
    X, ids = _matrix_and_ids(data)
    p1 = logreg_propensity(model, X)
    probs = np.column_stack([1.0 - p1, p1])
    return PredictionSet(sample_ids=ids, kind="class_probs", probs=probs, class_order=model.class_order)


# ── MLP ───────────────────────────────────────────────────────


def _init_params(d: int, h: int, n_out: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / max(d, 1)), size=(d, h)),
        "b1": np.zeros(h),
        "W2": rng.normal(0.0, np.sqrt(1.0 / h), size=(h, n_out)),
        "b2": np.zeros(n_out),
    }


def _forward(params: Mapping[str, np.ndarray], X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = X @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params["W2"] + params["b2"]
    return pre, hidden, out


def mlp_loss_and_grads(
    params: Mapping[str, np.ndarray],
    X: np.ndarray,
    targets: np.ndarray,
    task: str,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and analytic gradients.

    Classification: softmax cross-entropy with *targets* as column indices.
    Regression: half mean squared error.
    """
    n = X.shape[0]
    pre, hidden, out = _forward(params, X)
    if task == "regression":
        resid = out[:, 0] - targets
        loss = 0.5 * float(np.mean(resid**2))
        d_out = (resid / n)[:, None]
    else:
        cols = targets.astype(np.int64)
        logp = log_softmax(out, axis=1)
        loss = -float(np.mean(logp[np.arange(n), cols]))
        d_out = np.exp(logp)
        d_out[np.arange(n), cols] -= 1.0
        d_out /= n
    d_hidden = (d_out @ params["W2"].T) * (pre > 0)
    grads = {
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    return loss, grads


def mlp_fit(train: Dataset, config: MlpConfig = MlpConfig()) -> MlpModel:
    """Mini-batch gradient descent with seed-derived init and shuffling."""
    X, _ = _matrix_and_ids(train)
    _check_finite(X)
    if train.is_classification:
        class_order = tuple(int(c) for c in train.class_codes())
        column = {c: j for j, c in enumerate(class_order)}
        targets = np.array([column[int(c)] for c in train.y], dtype=np.float64)
        n_out = len(class_order)
    else:
        class_order = ()
        targets = train.y.astype(np.float64)
        n_out = 1
    task = train.task
    n, d = X.shape
    if n == 0:
        raise DataError("cannot train on an empty dataset")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = _init_params(d, config.hidden, n_out, int(seeds[0].generate_state(1)[0]))
    rng = np.random.default_rng(seeds[1])
    batch = max(1, min(config.batch_size, n))
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = mlp_loss_and_grads(params, X[idx], targets[idx], task)
            if not np.isfinite(loss):
                raise TrainingError("non-finite MLP loss", epoch)
            for name in params:
                params[name] = params[name] - config.learning_rate * grads[name]
        full_loss, _ = mlp_loss_and_grads(params, X, targets, task)
        if not np.isfinite(full_loss) or not all(np.isfinite(p).all() for p in params.values()):
            raise TrainingError("non-finite MLP loss", epoch)
        history.append(full_loss)
    logger.debug("mlp: %d epochs, final loss %.6g", config.epochs, history[-1] if history else float("nan"))
    return MlpModel(
        W1=params["W1"],
        b1=params["b1"],
        W2=params["W2"],
        b2=params["b2"],
        task=task,
        config=config,
        class_order=class_order,
        loss_history=tuple(history),
    )


def _mlp_params(model: MlpModel) -> dict[str, np.ndarray]:
    return {"W1": model.W1, "b1": model.b1, "W2": model.W2, "b2": model.b2}


def mlp_predict_proba(model: MlpModel, data: Features) -> PredictionSet:
    X, ids = _matrix_and_ids(data)
    _, _, out = _forward(_mlp_params(model), X)
    if model.task == "regression":
        return PredictionSet(sample_ids=ids, kind="regression", values=out[:, 0])
    return PredictionSet(
        sample_ids=ids, kind="class_probs", probs=softmax(out, axis=1), class_order=model.class_order
    )


def mlp_activations(model: MlpModel, data: Features) -> np.ndarray:
    """Post-ReLU hidden activations, shape (n, hidden)."""
    X, _ = _matrix_and_ids(data)
    _, hidden, _ = _forward(_mlp_params(model), X)
    return hidden


# ── Losses ────────────────────────────────────────────────────


def per_sample_loss(
    preds: PredictionSet,
    y_true: np.ndarray,
    loss: str = "zero_one",
    sample_ids: Sequence[str] | np.ndarray | None = None,
) -> np.ndarray:
    """Elementwise loss; *sample_ids* (the ids of y_true) realigns preds first."""
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss: {loss!r} (expected one of {', '.join(LOSSES)})")
    if sample_ids is not None:
        preds = preds.aligned_to(sample_ids)
    y = np.asarray(y_true)
    if y.shape[0] != len(preds):
        raise DataError(f"{len(preds)} predictions for {y.shape[0]} targets")
    if loss == "squared":
        if preds.kind != "regression":
            raise DataError("squared loss applies to regression predictions")
        return (preds.values - y.astype(np.float64)) ** 2
    if preds.kind != "class_probs":
        raise DataError(f"{loss} loss applies to class-probability predictions")
    if loss == "zero_one":
        return (preds.predicted_codes() != y.astype(np.int64)).astype(np.float64)
    column = {c: j for j, c in enumerate(preds.class_order)}
    p_true = np.array(
        [preds.probs[i, column[int(c)]] if int(c) in column else 0.0 for i, c in enumerate(y)],
        dtype=np.float64,
    )
    return -np.log(np.maximum(p_true, _PROB_FLOOR))


def default_loss(task: str) -> str:
    return "squared" if task == "regression" else "zero_one"


# ── External model files ──────────────────────────────────────


def _manifest_classes(manifest: Mapping[str, Any] | Sequence[str] | None) -> tuple[str, ...] | None:
    if manifest is None:
        return None
    if isinstance(manifest, Mapping):
        classes = manifest.get("classes")
        return None if not classes else tuple(str(c) for c in classes)
    return tuple(str(c) for c in manifest)


def _parse_float(raw: str, row_id: str, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"malformed value {raw!r} in column {column!r} for id {row_id!r}") from None
    if not np.isfinite(value):
        raise DataError(f"non-finite value in column {column!r} for id {row_id!r}")
    return value


def load_predictions(
    path: Path | str,
    manifest: Mapping[str, Any] | Sequence[str] | None,
    expected_ids: Sequence[str] | np.ndarray | None = None,
) -> PredictionSet:
    """Read an external prediction file.

    Classification files have header ``id,p_<label>,...`` with labels in
    manifest class order (a subset is allowed, e.g. the known classes of a
    held-out-class run). Regression files have header ``id,value``. Rows
    whose probabilities sum within 1e-3 of 1 are renormalized.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing prediction file: {path}")
    frame = read_table(path)
    header = [str(c).strip() for c in frame.columns]
    if not header or header[0] != "id":
        raise DataError(f"{path.name}: first column must be 'id'")
    ids = np.array([str(v).strip() for v in frame.iloc[:, 0]], dtype=object)
    if len(set(ids)) != ids.size:
        raise DataError(f"{path.name}: duplicate ids")
    if expected_ids is not None:
        wanted = {str(i) for i in expected_ids}
        extra = sorted(set(ids) - wanted)
        missing = sorted(wanted - set(ids))
        if extra:
            raise DataError(f"{path.name}: ids not present in the scenario: {extra[:10]}")
        if missing:
            raise DataError(f"{path.name}: missing predictions for ids {missing[:10]}")

    rest = header[1:]
    if rest == ["value"]:
        values = np.array(
            [_parse_float(str(v), i, "value") for v, i in zip(frame.iloc[:, 1], ids)], dtype=np.float64
        )
        return PredictionSet(sample_ids=ids, kind="regression", values=values)

    classes = _manifest_classes(manifest)
    if classes is None:
        raise DataError(f"{path.name}: probability columns need the manifest class list")
    labels = []
    for col in rest:
        if not col.startswith("p_"):
            raise DataError(f"{path.name}: unexpected column {col!r}")
        labels.append(col[2:])
    unknown = [lb for lb in labels if lb not in classes]
    if unknown:
        raise DataError(f"{path.name}: classes not in manifest: {unknown}")
    codes = [classes.index(lb) for lb in labels]
    if codes != sorted(codes) or len(set(codes)) != len(codes):
        raise DataError(f"{path.name}: probability columns must follow manifest class order {list(classes)}")

    probs = np.array(
        [[_parse_float(str(v), i, col) for v, col in zip(row, rest)] for row, i in zip(frame.iloc[:, 1:].itertuples(index=False), ids)],
        dtype=np.float64,
    ).reshape(len(ids), len(rest))
    for i, row in zip(ids, probs):
        if (row < 0).any() or (row > 1).any():
            raise DataError(f"{path.name}: probabilities outside [0, 1] for id {i!r}")
        total = float(row.sum())
        if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
            raise DataError(f"{path.name}: probabilities for id {i!r} sum to {total:.4g}")
    probs = probs / probs.sum(axis=1, keepdims=True)
    return PredictionSet(sample_ids=ids, kind="class_probs", probs=probs, class_order=tuple(codes))


def load_embeddings(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    """Read ``id,e_1,...,e_d``; returns (ids, matrix)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing embedding file: {path}")
    frame = read_table(path)
    header = [str(c).strip() for c in frame.columns]
    expected = ["id"] + [f"e_{j}" for j in range(1, len(header))]
    if len(header) < 2 or header != expected:
        raise DataError(f"{path.name}: embedding header must be id,e_1,...,e_d")
    ids = np.array([str(v).strip() for v in frame.iloc[:, 0]], dtype=object)
    E = np.array(
        [[_parse_float(str(v), i, col) for v, col in zip(row, header[1:])] for row, i in zip(frame.iloc[:, 1:].itertuples(index=False), ids)],
        dtype=np.float64,
    ).reshape(len(ids), len(header) - 1)
    return ids, E
