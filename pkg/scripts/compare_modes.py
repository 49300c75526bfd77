"""CASA against naive AL and the two offline references on the default stream.

Writes one run directory per (mode, seed) and prints a per-domain MAE table
with BWT, FWT, labels used and memory composition.

    python scripts/compare_modes.py [--config configs/default.yaml] [--out runs/compare]
"""

import argparse
from pathlib import Path

import numpy as np

from casa.cli import run_one
from casa.config import MODES, parse_config


def fmt(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return "-"
    return f"{np.mean(vals):6.2f} [{min(vals):.2f}, {max(vals):.2f}]"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--modes", nargs="*", default=list(MODES))
    args = ap.parse_args()
    cfg = parse_config(args.config)
    results = {m: [run_one(cfg, m, s, Path(args.out) / m / f"seed{s}") for s in cfg.seeds]
               for m in args.modes}

    names = results[args.modes[0]][0].domain_names
    order = results[args.modes[0]][0].domain_order
    print(f"{'mode':<11}" + "".join(f"{'MAE ' + names[d]:>24}" for d in order)
          + f"{'BWT':>24}{'FWT':>24}  labels")
    for m, rs in results.items():
        row = f"{m:<11}"
        row += "".join(f"{fmt([r.final_mae[d] for r in rs]):>24}" for d in order)
        row += f"{fmt([r.bwt for r in rs]):>24}{fmt([r.fwt for r in rs]):>24}"
        row += "  " + ",".join(str(r.labels_used) for r in rs)
        print(row)

    print("\nmemory composition by true domain (per seed)")
    for m in ("casa", "naive"):
        for r in results.get(m, []):
            comp = {names[d]: n for d, n in r.true_composition.items()}
            extra = ""
            if m == "casa" and r.purity is not None:
                pur = ", ".join(f"{k}:{v:.2f}" for k, v in r.purity.purity.items())
                extra = f"  pseudo-domains {len(r.domains)}, purity {pur}"
            print(f"  {m:<6} seed {r.seed}: {comp}  entropy {r.memory_entropy:.3f}{extra}")


if __name__ == "__main__":
    main()
