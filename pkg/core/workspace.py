"""Data/output roots and path helpers for tabopen."""

from __future__ import annotations

import os
from pathlib import Path

from core.errors import ConfigError


def data_root() -> Path:
    """Directory of registered datasets (``<name>.csv`` + optional ``<name>.yaml``)."""
    return Path(os.environ.get("TABOPEN_DATA", "data")).expanduser().resolve()


def output_root() -> Path:
    """Default output directory for runs."""
    return Path(os.environ.get("TABOPEN_OUT", "tabopen_out")).expanduser().resolve()


def resolve_dataset(name_or_path: str) -> tuple[Path, Path | None]:
    """Resolve a dataset argument to (table path, hints path or None).

    A path to an existing file wins; otherwise the name is looked up in
    the registered data root.
    """
    p = Path(name_or_path).expanduser()
    if p.is_file():
        hints = p.with_suffix(".yaml")
        return p, hints if hints.is_file() else None
    root = data_root()
    table = root / f"{name_or_path}.csv"
    if not table.is_file():
        raise ConfigError(f"dataset not found: {name_or_path!r} (looked in {root})")
    hints = root / f"{name_or_path}.yaml"
    return table, hints if hints.is_file() else None


# ── Path helpers ──────────────────────────────────────────────

def report_path(out: Path | None = None, fmt: str = "plain-table") -> Path:
    if out is None:
        out = output_root()
    return out / ("report.md" if fmt == "plain-table" else "report.json")


def results_path(out: Path | None = None) -> Path:
    if out is None:
        out = output_root()
    return out / "results.json"


def manifest_path(out: Path | None = None) -> Path:
    if out is None:
        out = output_root()
    return out / "manifest.yaml"


def run_log_path(out: Path | None = None) -> Path:
    if out is None:
        out = output_root()
    return out / "run_log.json"


def scenario_dir(name: str, out: Path | None = None) -> Path:
    if out is None:
        out = output_root()
    return out / "scenarios" / name
