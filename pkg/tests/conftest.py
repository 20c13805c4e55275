"""Shared test fixtures for tabopen tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml
from sklearn.datasets import load_iris

from core.data import load_table
from core.models import Dataset

IRIS_FEATURES = ["sepal_length", "sepal_width", "petal_length", "petal_width"]


@pytest.fixture
def iris_csv(tmp_path: Path) -> Path:
    """Iris written as a plain CSV: four numeric features, species last."""
    iris = load_iris()
    frame = pd.DataFrame(iris.data, columns=IRIS_FEATURES)
    frame["species"] = [str(iris.target_names[t]) for t in iris.target]
    path = tmp_path / "iris.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def iris(iris_csv: Path) -> Dataset:
    return load_table(iris_csv)


def _shift_frame(n: int, offset: float, flip: bool, rng: np.random.Generator, tag: str) -> pd.DataFrame:
    x1 = rng.normal(offset, 1.0, n)
    x2 = rng.normal(0.0, 1.0, n)
    cat = rng.choice(["a", "b", "c"], size=n)
    label = (x1 + x2 > offset).astype(int)
    if flip:
        label = 1 - label
    return pd.DataFrame({"x1": x1, "x2": x2, "cat": cat, "label": label, "split": tag})


@pytest.fixture
def shift_csv(tmp_path: Path) -> Path:
    """Binary table with a split column; ood_test rows are covariate-shifted.

    Writes ``shift.yaml`` hints next to the table.
    """
    rng = np.random.default_rng(7)
    frame = pd.concat(
        [
            _shift_frame(160, 0.0, False, rng, "train"),
            _shift_frame(60, 0.0, False, rng, "id_test"),
            _shift_frame(60, 1.0, False, rng, "ood_test"),
        ],
        ignore_index=True,
    )
    path = tmp_path / "shift.csv"
    frame.to_csv(path, index=False)
    hints = {"target": "label", "split_column": "split", "categorical": ["cat"]}
    (tmp_path / "shift.yaml").write_text(yaml.dump(hints), encoding="utf-8")
    return path


@pytest.fixture
def shift_hints() -> dict:
    return {"target": "label", "split_column": "split", "categorical": ["cat"]}


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    """An empty output directory."""
    root = tmp_path / "out"
    root.mkdir()
    return root


@pytest.fixture
def data_dir(tmp_path: Path, iris_csv: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Registered-dataset root holding ``iris.csv``; TABOPEN_DATA points at it."""
    root = tmp_path / "data"
    root.mkdir()
    (root / "iris.csv").write_bytes(iris_csv.read_bytes())
    monkeypatch.setenv("TABOPEN_DATA", str(root))
    monkeypatch.setenv("TABOPEN_OUT", str(tmp_path / "default_out"))
    return root
