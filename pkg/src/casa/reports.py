"""Run directories: raw logs written after a run, derived CSV reports, manifest.

A run directory holds the raw logs (``steps.jsonl``, ``rmatrix.csv``,
``summary.json``, ``memory.json``, ...) and the derived reports written by
:func:`emit_reports`. ``manifest.json`` lists every other file in the
directory with its size and sha256, so orphans are detectable.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dumps
from .evaluation import PurityReport

# logs every run directory must contain before reports can be derived
REQUIRED_LOGS = ("summary.json", "rmatrix.csv", "memory.json", "steps.jsonl")
REPORT_FILES = ("summary.csv", "curve.csv", "purity.csv", "manifest.json")


class MissingArtifactsError(FileNotFoundError):
    pass


def write_text(path: Path, text: str):
    # newline="" keeps bytes identical across platforms
    with open(path, "w", newline="") as fh:
        fh.write(text)


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_run(result, cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Dump a finished :class:`RunResult` and derive its reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = result.domain_names
    order = result.domain_order

    write_text(out / "config.yaml", dumps(cfg))
    write_text(out / "steps.jsonl", "".join(line + "\n" for line in result.step_log_lines()))

    header = ["step", "stream_pos", "boundary_for"] + [names[d] for d in order]
    rows = []
    for ck in result.checkpoints:
        rows.append([ck["step"], ck["stream_pos"], ";".join(names[d] for d in ck["boundary_for"])]
                    + [fmt_value(float(ck["mae"][d])) for d in order])
    write_text(out / "rmatrix.csv", csv_text(header, rows))

    summary = dict(result.summary(), domain_names=names, domain_order=order)
    write_text(out / "summary.json", json_text(summary))

    records = []
    for it in result.memory_items:
        rec = it.record()
        # evaluation-only ground truth, kept out of the controller
        rec["true_domain"] = result.truth.get(it.sample_id)
        records.append(rec)
    write_text(out / "memory.json", json_text(records))

    if result.mode == "casa":
        write_text(out / "domains.json", json_text({
            "domains": result.domains,
            "discoveries": result.discoveries,
        }))
        write_text(out / "forests.json", json.dumps([f.to_dict() for f in result.forests]) + "\n")
    if result.learner is not None:
        result.learner.save(out / "learner")
    emit_reports(out)
    return out


def _read_rmatrix(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def emit_reports(run_dir: str | Path) -> list[Path]:
    """(Re)write summary, curve and purity CSVs plus the manifest.

    Derived purely from the logs already in ``run_dir``; running it twice
    gives byte-identical files.
    """
    run_dir = Path(run_dir)
    missing = [n for n in REQUIRED_LOGS if not (run_dir / n).is_file()]
    if missing:
        raise MissingArtifactsError(f"{run_dir}: missing {', '.join(missing)}")
    summary = json.loads((run_dir / "summary.json").read_text())
    header, rows = _read_rmatrix(run_dir / "rmatrix.csv")
    domains = header[3:]

    sheader = ["mode", "seed"]
    sheader += [f"mae_{n}" for n in domains] + [f"baseline_{n}" for n in domains]
    sheader += ["bwt", "fwt", "labels_used", "budget", "memory_entropy", "n_discoveries"]
    srow = [summary["mode"], summary["seed"]]
    srow += [fmt_value(summary["final_mae"].get(n)) for n in domains]
    srow += [fmt_value(summary["baseline_mae"].get(n)) for n in domains]
    srow += [fmt_value(summary[k]) for k in
             ("bwt", "fwt", "labels_used", "budget", "memory_entropy", "n_discoveries")]
    stext = csv_text(sheader, [srow])
    write_text(run_dir / "summary.csv", stext)

    crows = []
    for r in rows:
        for name, v in zip(domains, r[3:]):
            crows.append([r[0], r[1], name, v])
    write_text(run_dir / "curve.csv", csv_text(["step", "stream_pos", "domain", "mae"], crows))

    memory = json.loads((run_dir / "memory.json").read_text())
    names = summary["domain_names"]
    pur = _purity_from_records(memory)
    prow_names = [names[t] for t in pur.true_domains]
    prows = [[p] + [int(n) for n in row] + [fmt_value(float(row.max() / row.sum()))]
             for p, row in zip(pur.pseudo_domains, pur.table)]
    write_text(run_dir / "purity.csv",
                csv_text(["pseudo_domain"] + prow_names + ["purity"], prows))

    write_manifest(run_dir)
    return [run_dir / n for n in REPORT_FILES]


def _purity_from_records(records) -> PurityReport:
    pairs = [(r["domain"], r["true_domain"]) for r in records]
    pseudo = sorted({p for p, _ in pairs})
    true = sorted({t for _, t in pairs})
    table = np.zeros((len(pseudo), len(true)), dtype=np.int64)
    for p, t in pairs:
        table[pseudo.index(p), true.index(t)] += 1
    return PurityReport(pseudo, true, table)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: str | Path) -> Path:
    """List every file under ``directory`` (except the manifest itself)."""
    directory = Path(directory)
    path = directory / "manifest.json"
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p != path)
    entries = [{"path": p.relative_to(directory).as_posix(), "bytes": p.stat().st_size,
                "sha256": _sha256(p)} for p in files]
    write_text(path, json_text({"files": entries}))
    return path


def orphan_files(directory: str | Path) -> list[str]:
    """Files present on disk but absent from the manifest."""
    directory = Path(directory)
    manifest = directory / "manifest.json"
    listed = {e["path"] for e in json.loads(manifest.read_text())["files"]}
    on_disk = (p.relative_to(directory).as_posix() for p in directory.rglob("*")
               if p.is_file() and p != manifest)
    return sorted(p for p in on_disk if p not in listed)
