"""Tests for core/shift.py."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from core.baselines import mlp_activations, mlp_fit, mlp_predict_proba
from core.data import load_table, partition_by_split, prepare_pair
from core.errors import ConvergenceError, DataError, OverlapError
from core.models import (
    CddScenario,
    Column,
    Dataset,
    DatasetSchema,
    GaussianSummary,
    MlpConfig,
    OtddConfig,
    PredictionSet,
    ShiftConfig,
)
from core.scenarios import cdd_prepare
from core.shift import (
    disde,
    fdd,
    fdd_layers,
    gaussian_summary,
    gaussian_w2,
    label_shift,
    otdd,
    shift_profile,
    sinkhorn,
    spd_sqrt,
)


def _two_class(n: int, seed: int, offset: float = 0.0) -> Dataset:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 2)) + 2.0 * y[:, None] + offset
    schema = DatasetSchema(columns=(Column("a"), Column("b")), target="y", task="binary")
    return Dataset(schema=schema, X=X, y=y, ids=[str(i) for i in range(n)], classes=("0", "1"))


# ── Gaussian pieces ───────────────────────────────────────────


def test_w2_one_dimensional_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(120):
        m1, m2 = rng.uniform(-5, 5, 2)
        s1, s2 = rng.uniform(0.1, 3.0, 2)
        g1 = GaussianSummary(mean=[m1], covariance=[[s1**2]], n=10)
        g2 = GaussianSummary(mean=[m2], covariance=[[s2**2]], n=10)
        expected = (m1 - m2) ** 2 + (s1 - s2) ** 2
        assert abs(gaussian_w2(g1, g2) - expected) <= 1e-9


def test_w2_self_distance_is_zero():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = gaussian_summary(rng.normal(size=(50, 5)) * rng.uniform(0.5, 2.0, 5))
        assert gaussian_w2(g, g) <= 1e-9


def test_w2_is_symmetric():
    rng = np.random.default_rng(12)
    for _ in range(50):
        d = int(rng.integers(1, 7))
        g1 = gaussian_summary(rng.normal(size=(30, d)) * rng.uniform(0.5, 2.0, d) + rng.normal(size=d))
        g2 = gaussian_summary(rng.normal(size=(30, d)) @ rng.normal(size=(d, d)))
        assert abs(gaussian_w2(g1, g2) - gaussian_w2(g2, g1)) <= 1e-9


def test_w2_dimension_mismatch():
    g1 = GaussianSummary(mean=[0.0], covariance=[[1.0]], n=2)
    g2 = GaussianSummary(mean=[0.0, 0.0], covariance=np.eye(2), n=2)
    with pytest.raises(DataError, match="dimension mismatch"):
        gaussian_w2(g1, g2)


def test_spd_sqrt_residual():
    rng = np.random.default_rng(2)
    for _ in range(120):
        d = int(rng.integers(1, 21))
        B = rng.normal(size=(d, d))
        A = B @ B.T
        S = spd_sqrt(A)
        assert np.linalg.norm(S @ S - A) <= 1e-8 * np.linalg.norm(A)
        np.testing.assert_allclose(S, S.T)


def test_spd_sqrt_rejects_asymmetric():
    with pytest.raises(DataError, match="not symmetric"):
        spd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_gaussian_summary_population_covariance():
    X = np.random.default_rng(3).normal(size=(40, 3))
    g = gaussian_summary(X)
    np.testing.assert_allclose(g.covariance, np.cov(X, rowvar=False, bias=True), atol=1e-12)
    np.testing.assert_allclose(g.mean, X.mean(axis=0))
    assert g.n == 40


def test_gaussian_summary_needs_two_rows():
    with pytest.raises(DataError, match="at least 2 rows"):
        gaussian_summary(np.ones((1, 3)))


def test_gaussian_summary_rank_deficient_is_psd():
    X = np.random.default_rng(4).normal(size=(3, 6))
    w = np.linalg.eigvalsh(gaussian_summary(X).covariance)
    assert w.min() >= -1e-12


# ── FDD & label shift ─────────────────────────────────────────


def test_fdd_mean_shift():
    E = np.random.default_rng(5).normal(size=(200, 4))
    assert fdd(E, E) <= 1e-9
    assert fdd(E, E + 2.0) == pytest.approx(16.0, rel=1e-6)


def test_fdd_rotation_invariant():
    rng = np.random.default_rng(13)
    for _ in range(20):
        d = int(rng.integers(2, 9))
        a = rng.normal(size=(80, d))
        b = rng.normal(size=(60, d)) * rng.uniform(0.5, 2.0, d) + rng.normal(size=d)
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        base = fdd(a, b)
        assert abs(fdd(a @ Q, b @ Q) - base) <= 1e-6 * max(base, 1e-12)


def test_fdd_dimension_mismatch():
    with pytest.raises(DataError, match="dimension mismatch"):
        fdd(np.zeros((5, 2)), np.zeros((5, 3)))


def test_fdd_layer_modes():
    rng = np.random.default_rng(6)
    a = [rng.normal(size=(30, 3)), rng.normal(size=(30, 2))]
    b = [rng.normal(size=(30, 3)) + 1.0, rng.normal(size=(30, 2)) - 1.0]
    assert fdd_layers(a, b, "final") == fdd(a[1], b[1])
    assert fdd_layers(a, b, "sum") == pytest.approx(fdd(a[0], b[0]) + fdd(a[1], b[1]))
    assert fdd_layers(a[1], b[1]) == fdd(a[1], b[1])
    with pytest.raises(DataError, match="layer mode"):
        fdd_layers(a, b, "mean")


def test_label_shift():
    assert label_shift(np.array([0, 0, 1, 1]), np.array([1, 1, 1, 0])) == 0.0625
    assert label_shift(np.array([0, 1]), np.array([1, 0])) == 0.0


def test_label_shift_binary_only():
    with pytest.raises(DataError, match="binary"):
        label_shift(np.array([0, 1, 2]), np.array([0, 1]))


# ── Sinkhorn ──────────────────────────────────────────────────


def _exact_assignment_cost(C: np.ndarray) -> float:
    n = C.shape[0]
    perms = np.array(list(itertools.permutations(range(n))))
    return float(C[np.arange(n), perms].sum(axis=1).min()) / n


def test_sinkhorn_close_to_exact_transport():
    rng = np.random.default_rng(7)
    for n in range(3, 9):
        for _ in range(3):
            x = rng.normal(size=(n, 2))
            y = rng.normal(size=(n, 2))
            C = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
            w = np.full(n, 1.0 / n)
            cfg = OtddConfig(entropic_epsilon=0.01 * float(np.median(C)), max_iterations=20000)
            P, cost = sinkhorn(C, w, w, cfg)
            exact = _exact_assignment_cost(C)
            residual = np.abs(P.sum(axis=1) - w).sum() + np.abs(P.sum(axis=0) - w).sum()
            assert residual <= 1e-6
            assert cost >= exact - 1e-4
            assert cost <= 1.02 * exact


def test_sinkhorn_two_point_limit():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    w = np.array([0.5, 0.5])
    P, cost = sinkhorn(C, w, w, OtddConfig(entropic_epsilon=1e-3))
    assert cost <= 1e-9
    np.testing.assert_allclose(P, 0.5 * np.eye(2), atol=1e-9)


def test_sinkhorn_zero_cost():
    a = np.array([0.25, 0.75])
    b = np.array([0.5, 0.5])
    P, cost = sinkhorn(np.zeros((2, 2)), a, b)
    assert cost == 0.0
    np.testing.assert_allclose(P, np.outer(a, b))


def test_sinkhorn_rejects_bad_weights():
    with pytest.raises(DataError, match="must sum to 1"):
        sinkhorn(np.ones((2, 2)), np.array([0.5, 0.6]), np.array([0.5, 0.5]))


def test_sinkhorn_convergence_error():
    C = np.random.default_rng(8).random((6, 6))
    w = np.full(6, 1 / 6)
    cfg = OtddConfig(entropic_epsilon=1e-3, max_iterations=10, tolerance=1e-12)
    with pytest.raises(ConvergenceError) as info:
        sinkhorn(C, w, w, cfg)
    assert info.value.iterations == 10
    assert info.value.residual > 1e-12


# ── Dataset distance ──────────────────────────────────────────


def test_otdd_grows_with_covariate_shift():
    a = _two_class(40, 0)
    shifted = _two_class(40, 1, offset=3.0)
    # a small epsilon keeps the entropic self-distance close to 0
    sharp = OtddConfig(epsilon_scale=0.001)
    assert otdd(a, a, sharp) <= 0.25
    far = otdd(a, shifted)
    # point and label costs both carry the offset
    assert far >= np.sqrt(18.0) - 1e-6
    assert otdd(a, a) < far / 3


def test_otdd_symmetric():
    for seed in range(3):
        a = _two_class(30, seed)
        b = _two_class(36, seed + 10, offset=1.0)
        assert otdd(a, b) == pytest.approx(otdd(b, a), rel=1e-4)


def test_otdd_subsample_cap_is_seeded():
    a, b = _two_class(60, 0), _two_class(60, 1, offset=1.0)
    cfg = OtddConfig(subsample_cap=20, seed=3)
    assert otdd(a, b, cfg) == otdd(a, b, cfg)


def test_otdd_names_tiny_class():
    a = _two_class(20, 0)
    tiny = a.take([0, 2, 4, 1])
    with pytest.raises(DataError, match="class '1'"):
        otdd(a, tiny)


def test_otdd_rejects_regression():
    schema = DatasetSchema(columns=(Column("a"),), target="y", task="regression")
    reg = Dataset(schema=schema, X=np.zeros((4, 1)), y=np.arange(4.0), ids=list("abcd"))
    with pytest.raises(DataError, match="classification"):
        otdd(reg, reg)


# ── Gap decomposition ─────────────────────────────────────────


def test_disde_terms_telescope():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n_p, n_q = rng.integers(15, 40, 2)
        x_p = rng.normal(size=(n_p, 2))
        x_q = rng.normal(size=(n_q, 2)) + rng.uniform(0, 1)
        l_p = rng.random(n_p)
        l_q = rng.random(n_q)
        report = disde(l_p, x_p, l_q, x_q, eta=0.1, k=5)
        total = report.term_1 + report.term_2 + report.term_3
        assert abs(total - (l_q.mean() - l_p.mean())) <= 1e-12
        assert report.total_gap == pytest.approx(l_q.mean() - l_p.mean(), abs=1e-15)
        assert 0.0 < report.overlap_fraction <= 1.0


def test_disde_pure_concept_shift():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(400, 2))
    l_p = (rng.random(400) < 0.1).astype(float)
    l_q = (rng.random(400) < 0.9).astype(float)
    report = disde(l_p, x, l_q, x.copy(), eta=0.1, k=10)
    assert abs(report.term_2) >= 5 * max(abs(report.term_1), abs(report.term_3))
    assert report.pattern == "Y|X-dominant"


def test_disde_empty_overlap():
    rng = np.random.default_rng(11)
    x_p = rng.normal(-10.0, 0.1, size=(30, 1))
    x_q = rng.normal(10.0, 0.1, size=(30, 1))
    with pytest.raises(OverlapError) as info:
        disde(np.zeros(30), x_p, np.ones(30), x_q, eta=0.1, k=5)
    assert sum(info.value.histogram) == 60
    assert len(info.value.edges) == 11


@pytest.mark.parametrize("eta", [0.0, 0.5, 0.7])
def test_disde_eta_range(eta):
    x = np.zeros((10, 1))
    with pytest.raises(DataError, match="eta"):
        disde(np.zeros(10), x, np.zeros(10), x, eta=eta, k=3)


def test_disde_k_too_large():
    x = np.random.default_rng(0).normal(size=(5, 1))
    with pytest.raises(DataError, match="exceeds"):
        disde(np.zeros(5), x, np.zeros(5), x, k=10)


# ── Profile ───────────────────────────────────────────────────


def test_shift_profile_on_split_table(shift_csv, shift_hints):
    ds = load_table(shift_csv, shift_hints)
    scenario = cdd_prepare(*partition_by_split(ds), cap=1000, seed=0)
    train, id_test, ood_test = prepare_pair(scenario.train, scenario.id_test, scenario.ood_test)
    model = mlp_fit(train, MlpConfig(hidden=8, epochs=30, seed=0))
    embeddings = {"train": mlp_activations(model, train), "ood_test": mlp_activations(model, ood_test)}
    predictions = {"id_test": mlp_predict_proba(model, id_test), "ood_test": mlp_predict_proba(model, ood_test)}
    profile = shift_profile(scenario, embeddings, predictions, ShiftConfig(seed=0))
    assert profile.delta_x > 0
    assert profile.delta_y_given_x >= 0
    assert profile.delta_y >= 0
    d = profile.disde
    assert abs(d.term_1 + d.term_2 + d.term_3 - d.total_gap) <= 1e-12
    assert profile.pattern in ("X-dominant", "Y|X-dominant")
    assert profile.config["provenance"] == scenario.provenance


def test_shift_profile_missing_inputs(shift_csv, shift_hints):
    scenario = cdd_prepare(*partition_by_split(load_table(shift_csv, shift_hints)), cap=1000, seed=0)
    with pytest.raises(DataError, match="embeddings"):
        shift_profile(scenario, {"train": np.zeros((2, 2))}, {})


def _rule_split(n: int, seed: int, tag: str, shift: float = 0.0, flip: bool = False) -> Dataset:
    """Label is a > 0 whatever the covariate shift; *flip* inverts it."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) + shift
    y = (X[:, 0] > 0).astype(np.int64)
    if flip:
        y = 1 - y
    schema = DatasetSchema(columns=(Column("a"), Column("b")), target="y", task="binary")
    return Dataset(schema=schema, X=X, y=y, ids=[f"{tag}{i}" for i in range(n)], classes=("0", "1"))


def _threshold_predictions(ds: Dataset) -> PredictionSet:
    pred = (ds.X[:, 0] > 0.5).astype(np.int64)
    return PredictionSet(sample_ids=ds.ids, kind="class_probs", probs=np.eye(2)[pred], class_order=(0, 1))


def _profile(train: Dataset, id_test: Dataset, ood_test: Dataset, cfg: ShiftConfig = ShiftConfig(seed=0)):
    scenario = CddScenario(train=train, id_test=id_test, ood_test=ood_test)
    embeddings = {"train": train.X, "ood_test": ood_test.X}
    predictions = {"id_test": _threshold_predictions(id_test), "ood_test": _threshold_predictions(ood_test)}
    return shift_profile(scenario, embeddings, predictions, cfg)


def test_shift_profile_identical_splits():
    ds = _rule_split(60, 0, "s")
    profile = _profile(ds, ds, ds, ShiftConfig(otdd=OtddConfig(epsilon_scale=0.001), seed=0))
    assert profile.delta_x <= 0.25
    assert profile.delta_y_given_x <= 1e-9
    assert profile.delta_y == 0.0
    assert abs(profile.disde.total_gap) <= 1e-12
    assert abs(profile.disde.term_2) <= 1e-12


def test_shift_profile_covariate_shift_is_x_dominant():
    train = _rule_split(600, 0, "t")
    id_test = _rule_split(600, 1, "i")
    ood_test = _rule_split(600, 3, "o", shift=1.5)
    profile = _profile(train, id_test, ood_test)
    d = profile.disde
    assert profile.pattern == "X-dominant"
    assert abs(d.term_1 + d.term_3) > abs(d.term_2)
    assert d.total_gap < 0
    assert profile.delta_x > _profile(train, id_test, _rule_split(600, 4, "p")).delta_x


def test_shift_profile_label_flip_is_conditional():
    train = _rule_split(400, 0, "t")
    id_test = _rule_split(400, 2, "i")
    flipped = _rule_split(400, 2, "o", flip=True)
    profile = _profile(train, id_test, flipped)
    d = profile.disde
    assert profile.pattern == "Y|X-dominant"
    assert d.term_2 > 0.5
    assert abs(d.term_2) >= 5 * abs(d.term_1 + d.term_3)
