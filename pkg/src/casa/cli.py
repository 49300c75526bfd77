"""Command line entry point: ``run``, ``sweep``, ``report``, ``export-embeddings``.

The output root defaults to the config's ``output_dir`` and can be
overridden with the ``CASA_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, ExperimentConfig, parse_config
from .controller import RUNNERS
from .reports import (
    csv_text,
    emit_reports,
    fmt_value,
    json_text,
    write_manifest,
    write_run,
    write_text,
)
from .stream import generate_experiment
from .style import StyleEmbedder

log = logging.getLogger("casa")

ENV_OUTPUT_ROOT = "CASA_OUTPUT_ROOT"


def output_root(cfg: ExperimentConfig, override: str | None = None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get(ENV_OUTPUT_ROOT) or cfg.output_dir)


def point_name(point: dict) -> str:
    if not point:
        return "default"
    parts = []
    for k, v in point.items():
        v = str(v).replace("/", "_")
        parts.append(f"{k}={v}")
    return ",".join(parts)


def run_one(cfg: ExperimentConfig, mode: str, seed: int, out_dir: str | Path):
    if mode not in RUNNERS:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    result = RUNNERS[mode](cfg, seed)
    write_run(result, cfg, out_dir)
    return result


def _sweep_job(args):
    cfg, mode, point, seed, out_dir = args
    try:
        res = run_one(cfg, mode, seed, out_dir)
        return {"ok": True, "summary": json.loads((Path(out_dir) / "summary.json").read_text()),
                "labels_used": res.labels_used}
    except Exception as exc:  # recorded, sweep continues
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def run_sweep(cfg: ExperimentConfig, modes=None, out_root: str | Path | None = None,
              jobs: int = 1) -> list[dict]:
    """Run every (mode, parameter point, seed) and aggregate per cell.

    Returns one row per (mode, point): mean and min-max of each domain's
    final MAE, BWT, FWT and labels used over the seeds that finished.
    """
    if modes is None:
        modes = cfg.sweep.modes if cfg.sweep is not None else ["casa", "naive"]
    modes = list(modes)
    grid = cfg.sweep.grid() if cfg.sweep is not None else [{}]
    root = output_root(cfg, out_root)
    tasks = []
    for mode in modes:
        for point in grid:
            pcfg = cfg.with_overrides(**point) if point else cfg
            for seed in cfg.seeds:
                d = root / mode / point_name(point) / f"seed{seed}"
                tasks.append((pcfg, mode, point, seed, d))
    if jobs > 1 and tasks:
        with ProcessPoolExecutor(jobs) as ex:
            outcomes = list(ex.map(_sweep_job, tasks))
    else:
        outcomes = [_sweep_job(t) for t in tasks]

    cells: dict[tuple, dict] = {}
    for (pcfg, mode, point, seed, d), out in zip(tasks, outcomes):
        cell = cells.setdefault((mode, point_name(point)), {
            "mode": mode, "point": point, "runs": [], "failures": []})
        if out["ok"]:
            cell["runs"].append(out["summary"])
        else:
            log.error("run %s seed %d failed: %s", d, seed, out["error"])
            cell["failures"].append({"seed": seed, "error": out["error"]})
    rows = [_aggregate(c) for c in cells.values()]
    if tasks:
        root.mkdir(parents=True, exist_ok=True)
        write_sweep_summary(rows, root)
        write_manifest(root)
    return rows


def _spread(values) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "min": None, "max": None}
    return {"mean": float(np.mean(vals)), "min": float(min(vals)), "max": float(max(vals))}


def _aggregate(cell: dict) -> dict:
    runs = cell["runs"]
    row = {"mode": cell["mode"], "point": dict(cell["point"]), "n_runs": len(runs),
           "failures": cell["failures"]}
    names = runs[0]["domain_names"] if runs else []
    row["mae"] = {n: _spread([r["final_mae"].get(n) for r in runs]) for n in names}
    row["bwt"] = _spread([r["bwt"] for r in runs])
    row["fwt"] = _spread([r["fwt"] for r in runs])
    row["labels_used"] = _spread([r["labels_used"] for r in runs])
    return row


def _pm(s: dict) -> list[str]:
    return [fmt_value(s["mean"]), fmt_value(s["min"]), fmt_value(s["max"])]


def write_sweep_summary(rows: list[dict], root: Path) -> Path:
    """One line per (mode, parameter point), each metric as mean, min and max."""
    names = sorted({n for r in rows for n in r["mae"]})
    header = ["mode", "beta", "k", "memory_size", "n_runs", "n_failed"]
    for n in names:
        header += [f"mae_{n}_mean", f"mae_{n}_min", f"mae_{n}_max"]
    for m in ("bwt", "fwt", "labels_used"):
        header += [f"{m}_mean", f"{m}_min", f"{m}_max"]
    out = []
    for r in rows:
        p = r["point"]
        line = [r["mode"], p.get("beta", ""), p.get("k", ""), p.get("memory_size", ""),
                r["n_runs"], len(r["failures"])]
        for n in names:
            line += _pm(r["mae"].get(n, {"mean": None, "min": None, "max": None}))
        for m in ("bwt", "fwt", "labels_used"):
            line += _pm(r[m])
        out.append(line)
    write_text(root / "sweep_summary.csv", csv_text(header, out))
    write_text(root / "sweep_summary.json", json_text(rows))
    return root / "sweep_summary.csv"


def export_embeddings(cfg: ExperimentConfig, seed: int, path: str | Path) -> Path:
    """CSV of style embeddings for every pretrain, stream, val and test image."""
    exp = generate_experiment(cfg.stream, seed)
    embedder = StyleEmbedder.from_config(cfg.style, cfg.stream.image_size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    splits = [("pretrain", exp.pretrain), ("stream", exp.stream)]
    for d in exp.domain_order:
        splits += [("val", exp.val[d]), ("test", exp.test[d])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split", "domain_truth"] + [f"e{i}" for i in range(embedder.dim)])
        for split, samples in splits:
            for s, e in zip(samples, embedder.embed_many([s.image for s in samples])):
                w.writerow([s.id, split, exp.domain_names[s.domain]] + [repr(float(v)) for v in e])
    return path


def _find_run_dirs(path: Path) -> list[Path]:
    if (path / "summary.json").is_file():
        return [path]
    return sorted(p.parent for p in path.rglob("summary.json"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="casa", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one run of one mode and seed")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODES, default="casa")
    p.add_argument("--seed", type=int, default=None, help="default: first seed in the config")
    p.add_argument("--out", default=None, help="run directory")

    p = sub.add_parser("sweep", help="all modes x parameter grid x seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--modes", nargs="*", default=None)
    p.add_argument("--out", default=None, help="sweep root directory")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="re-derive reports from existing run logs")
    p.add_argument("path", help="a run directory or a sweep root")

    p = sub.add_parser("export-embeddings", help="style embeddings as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            seed = cfg.seeds[0] if args.seed is None else args.seed
            out = Path(args.out) if args.out else output_root(cfg) / f"{args.mode}_seed{seed}"
            res = run_one(cfg, args.mode, seed, out)
            print(json.dumps({"out": str(out), "labels_used": res.labels_used,
                              "final_mae": {res.domain_names[d]: round(v, 4)
                                            for d, v in res.final_mae.items()}}))
        elif args.command == "sweep":
            cfg = parse_config(args.config)
            for m in args.modes or []:
                if m not in MODES:
                    raise ConfigError(f"unknown mode {m!r}")
            rows = run_sweep(cfg, args.modes, args.out, args.jobs)
            failed = sum(len(r["failures"]) for r in rows)
            print(json.dumps({"cells": len(rows), "failed_runs": failed,
                              "out": str(output_root(cfg, args.out))}))
            if failed:
                return 3
        elif args.command == "report":
            path = Path(args.path)
            if not path.exists():
                raise FileNotFoundError(f"no such directory: {path}")
            dirs = _find_run_dirs(path)
            if not dirs:
                raise FileNotFoundError(f"{path}: no run logs found")
            for d in dirs:
                emit_reports(d)
            print(json.dumps({"reports": len(dirs)}))
        elif args.command == "export-embeddings":
            cfg = parse_config(args.config)
            seed = cfg.seeds[0] if args.seed is None else args.seed
            print(export_embeddings(cfg, seed, args.out))
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"casa: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
