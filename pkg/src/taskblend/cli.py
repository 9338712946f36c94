"""Command-line entry point: ``taskblend {run,sweep,verify,report}``.

Exit codes: 0 success, 1 failed verification checks, 2 invalid input,
3 divergence, 4 at least one failed sweep cell.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .config import (ConfigError, ExperimentConfig, build_problem, dump_config, load_config,
                     load_manifest)
from .metrics import MetricSpec, delta_p
from .trainer import DivergenceError, train
from .verify import SUITE_NAMES, load_defaults, report_json, run_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PARTIAL = 4


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _err(msg: str) -> None:
    print(f"taskblend: {msg}", file=sys.stderr)


# ------------------------------------------------------------------ run


def _write_run(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict[str, Any]:
    """Train one seed and write ``run.csv``, ``summary.json`` and ``config.json``.

    Raises :class:`DivergenceError` before anything is written.
    """
    problem = build_problem(cfg.problem)
    record = train(problem, cfg.train_config(seed))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.csv").write_text(record.to_csv())
    (out_dir / "summary.json").write_text(record.summary_json() + "\n")
    (out_dir / "config.json").write_text(dump_config(cfg) + "\n")
    return record.summary()


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    run = cfg.run.model_dump()
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["output_dir"] = args.out
    return cfg.model_copy(update={"run": type(cfg.run).model_validate(run)})


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        build_problem(cfg.problem)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    out = Path(cfg.run.output_dir)
    seeds = cfg.run.seeds
    for seed in seeds:
        target = out if len(seeds) == 1 else out / f"seed{seed}"
        try:
            summary = _write_run(cfg, seed, target)
        except DivergenceError as exc:
            _err(str(exc))
            return EXIT_DIVERGED
        _say(args, f"seed {seed}: final mean loss {summary['final_mean_loss']:.6g} -> {target}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def _sweep_cell(payload: tuple[str, str, str]) -> dict[str, Any]:
    name, cfg_json, out_dir = payload
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    entry = {"name": name, "strategy": cfg.strategy.kind, "distribution": cfg.distribution,
             "seed": cfg.run.seeds[0], "dir": name}
    try:
        summary = _write_run(cfg, cfg.run.seeds[0], Path(out_dir) / name)
    except Exception as exc:  # a failed cell must not abort the sweep
        return {**entry, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {**entry, "status": "ok", "final_losses": summary["final_losses"]}


def _parallelism(requested: int) -> int:
    cap = os.environ.get("TASKBLEND_THREADS")
    n = max(1, requested)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def cmd_sweep(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        if args.seed is not None:
            manifest = manifest.model_copy(update={"axes": manifest.axes.model_copy(update={"seeds": [args.seed]})})
        cells = manifest.cells()
        build_problem(manifest.base.problem)
    except ConfigError as exc:
        _err(f"invalid manifest: {exc}")
        return EXIT_CONFIG
    out = Path(args.out or manifest.base.run.output_dir)
    payloads = [(name, cfg.model_dump_json(), str(out)) for name, cfg in cells]
    workers = _parallelism(args.jobs)
    if workers == 1:
        entries = [_sweep_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_sweep_cell, payloads))
    out.mkdir(parents=True, exist_ok=True)
    failed = [e for e in entries if e["status"] != "ok"]
    index = {"n_tasks": manifest.base.problem.T, "cells": entries, "failed": len(failed)}
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    for e in entries:
        _say(args, f"{e['status']:>6}  {e['name']}" + (f"  ({e['error']})" if e["status"] != "ok" else ""))
    if failed:
        _err(f"{len(failed)} of {len(entries)} cells failed")
        return EXIT_PARTIAL
    return EXIT_OK


# --------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    if args.suite not in SUITE_NAMES:
        _err(f"unknown suite {args.suite!r}; choose from {', '.join(SUITE_NAMES)}")
        return EXIT_CONFIG
    overrides = None
    if args.defaults:
        try:
            overrides = json.loads(Path(args.defaults).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            _err(f"cannot read defaults override: {exc}")
            return EXIT_CONFIG
    results = run_suite(args.suite, load_defaults(overrides), progress=lambda r: _say(args, r.line()))
    passed = all(r.passed for r in results)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"verify_{args.suite}.json").write_text(report_json(results) + "\n")
    print(f"{args.suite}: {sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# --------------------------------------------------------------- report


def _label(cell: dict[str, Any]) -> str:
    return cell["strategy"] if cell.get("distribution") is None else f"{cell['strategy']}-{cell['distribution']}"


def build_report(index: dict[str, Any]) -> list[dict[str, Any]]:
    """One row per method: mean final per-task losses over seeds and Δp
    against the EW row (every loss is lower-is-better)."""
    groups: dict[str, list[list[float]]] = {}
    for cell in index.get("cells", []):
        if cell.get("status") == "ok":
            groups.setdefault(_label(cell), []).append(cell["final_losses"])
    if "ew" not in groups:
        raise ConfigError("sweep index has no successful EW cell to use as baseline")
    means = {k: np.mean(np.asarray(v, dtype=np.float64), axis=0) for k, v in groups.items()}
    base = means["ew"]
    spec = MetricSpec.uniform(len(base))
    rows = []
    for label in ["ew"] + sorted(k for k in means if k != "ew"):
        m = means[label]
        rows.append({"method": label, "seeds": len(groups[label]), "delta_p": delta_p([[v] for v in m], [[v] for v in base], spec),
                     "losses": [float(v) for v in m]})
    return rows


def cmd_report(args) -> int:
    path = Path(args.index)
    try:
        index = json.loads(path.read_text())
        rows = build_report(index)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        _err(f"cannot read sweep index {path}: {exc}")
        return EXIT_CONFIG
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    n_tasks = len(rows[0]["losses"])
    header = ["method", "seeds", "delta_p"] + [f"loss_{t}" for t in range(1, n_tasks + 1)]
    out_dir = Path(args.out) if args.out else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([r["method"], r["seeds"], format(r["delta_p"], ".17g")] + [format(v, ".17g") for v in r["losses"]])
    width = max(len(r["method"]) for r in rows)
    print(f"{'method':<{width}}  {'delta_p':>9}  " + "  ".join(f"{h:>12}" for h in header[3:]))
    for r in rows:
        print(f"{r['method']:<{width}}  {r['delta_p']:>+8.2f}%  " + "  ".join(f"{v:>12.6g}" for v in r["losses"]))
    return EXIT_OK


# ----------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the run seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only print errors and summaries")

    parser = argparse.ArgumentParser(prog="taskblend", parents=[common],
                                     description="Multi-task loss weighting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="train one experiment config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="run strategies x distributions x seeds")
    p.add_argument("manifest")
    p.add_argument("-j", "--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("suite", nargs="?", default="all", help=f"one of {', '.join(SUITE_NAMES)}")
    p.add_argument("--defaults", help="JSON file deep-merged over the pinned verification defaults")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("report", parents=[common], help="Δp table from a sweep index")
    p.add_argument("index")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    for name, default in (("seed", None), ("out", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
