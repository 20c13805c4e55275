#!/usr/bin/env python3
"""tabopen: open-environment evaluation runs from the command line.

Usage:
  tabopen --dataset iris --model knn --task enc [--out DIR] [--seed N]
  tabopen rank results_a.json results_b.json [--out DIR]
  tabopen replay scenarios/df_level_0.2 --out DIR
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

# ── Ensure project root is on sys.path so `from core import ...` works ──
_PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(_PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(_PROJECT_ROOT))

from rich.console import Console
from rich.logging import RichHandler

from core import (
    ConfigError,
    DataError,
    RUN_TASKS,
    RunConfig,
    execute,
    print_tables,
    rank_results,
    read_yaml,
    replay_manifest,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

console = Console(stderr=False)
logger = logging.getLogger("tabopen")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)],
        force=True,
    )


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"invalid number list: {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"invalid integer list: {text!r}") from None


# ── run ───────────────────────────────────────────────────────

def _run_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabopen", description="Run one open-environment evaluation task.")
    p.add_argument("--dataset", help="table path or registered dataset name")
    p.add_argument("--model", help="knn | logreg | mlp | external:<dir>; comma-separate several")
    p.add_argument("--task", choices=RUN_TASKS)
    p.add_argument("--export-dataset", action="store_true", default=None, help="write scenario tables")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", help="decremental levels, e.g. 0.2,0.4,0.6")
    p.add_argument("--cap", type=int, help="row cap for changing-distribution runs")
    p.add_argument("--objectives", help="comma-separated objectives")
    p.add_argument("--n-new", help="incremental column counts, e.g. 5,10")
    p.add_argument("--id-test", help="in-distribution test table (with --ood-test)")
    p.add_argument("--ood-test", help="out-of-distribution test table")
    p.add_argument("--hints", help="schema hints YAML")
    p.add_argument("--k", type=int, help="neighbours for the built-in k-NN")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="run configuration YAML; flags override it")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def build_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then every flag that was given."""
    base: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        base = read_yaml(path)
    overrides = {
        "dataset": args.dataset,
        "model": args.model,
        "task": args.task,
        "export_dataset": args.export_dataset,
        "seed": args.seed,
        "levels": _floats(args.levels) if args.levels else None,
        "cap": args.cap,
        "objectives": [o.strip() for o in args.objectives.split(",")] if args.objectives else None,
        "n_new": _ints(args.n_new) if args.n_new else None,
        "id_test": args.id_test,
        "ood_test": args.ood_test,
        "hints": args.hints,
        "k": args.k,
        "output_dir": args.out,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def _cli_run(argv: list[str]) -> int:
    args = _run_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        result, log = execute(build_config(args))
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    print_tables(result.tables, console)
    trained = ", ".join(f"{m}={n}" for m, n in sorted(log.train_invocations.items())) or "none"
    console.print(f"[dim]training invocations: {trained}[/dim]")
    return EXIT_OK


# ── rank / replay ─────────────────────────────────────────────

def _cli_rank(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="tabopen rank", description="Average ranks over results.json files.")
    p.add_argument("results", nargs="+")
    p.add_argument("--out")
    p.add_argument("--verbose", "-v", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        table = rank_results([Path(r) for r in args.results], out)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    print_tables([table], console)
    return EXIT_OK


def _cli_replay(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="tabopen replay", description="Regenerate an exported scenario.")
    p.add_argument("manifest", help="scenario directory or its manifest.yaml")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", "-v", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        manifest = replay_manifest(Path(args.manifest), Path(args.out))
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    console.print(f"replayed {manifest['kind']} scenario into {args.out}")
    return EXIT_OK


_COMMANDS = {"rank": _cli_rank, "replay": _cli_replay}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in _COMMANDS:
        return _COMMANDS[argv[0]](argv[1:])
    if argv and argv[0] == "run":
        argv = argv[1:]
    try:
        return _cli_run(argv)
    except SystemExit as exc:
        # argparse usage errors count as configuration errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
