"""Grid over label budget and completion threshold (configs/sweep.yaml).

Runs every (mode, beta, k, seed), writes the per-run directories and
``sweep_summary.csv`` under the output root, then prints the summary with
each metric as mean and [min, max] over seeds.

    python scripts/budget_sweep.py [--config configs/sweep.yaml] [--jobs 4]
"""

import argparse

from casa.cli import output_root, run_sweep
from casa.config import parse_config


def span(cell):
    if cell["mean"] is None:
        return "-"
    return f"{cell['mean']:.2f} [{cell['min']:.2f}, {cell['max']:.2f}]"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/sweep.yaml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = parse_config(args.config)
    rows = run_sweep(cfg, out_root=args.out, jobs=args.jobs)
    for r in rows:
        p = r["point"]
        maes = "  ".join(f"{n} {span(c)}" for n, c in r["mae"].items())
        lab = r["labels_used"]
        print(f"{r['mode']:<6} beta={p.get('beta', '-'):<5} k={p.get('k', '-'):<4} {maes}  "
              f"BWT {span(r['bwt'])}  FWT {span(r['fwt'])}  "
              f"labelled [{lab['min']:.0f}-{lab['max']:.0f}]  failed {len(r['failures'])}")
    print(f"summary: {output_root(cfg, args.out) / 'sweep_summary.csv'}")


if __name__ == "__main__":
    main()
