"""Per-domain error, backward/forward transfer, memory composition and purity.

All transfer metrics use the error convention: entries of ``R`` are MAEs
(lower is better), so terms are ``earlier - later`` and positive values
mean improvement.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .learner import metric


def evaluate_checkpoint(learner, test_sets: dict) -> dict[int, float]:
    """MAE of ``learner`` on each domain's test set ``{domain: [(image, label)]}``."""
    row = {}
    for d, samples in test_sets.items():
        if len(samples) == 0:
            raise ValueError(f"test set for domain {d} is empty")
        images = np.stack([s[0] for s in samples])
        labels = np.array([s[1] for s in samples], dtype=np.float64)
        row[d] = metric(learner.predict_many(images), labels)
    return row


def compute_bwt(r_boundary, final_row=None) -> float:
    """Mean over the first T-1 domains of ``R_b[i][i] - R_final[i]``.

    ``r_boundary[i]`` is the row recorded when domain ``i``'s segment ended;
    columns follow the same domain order. ``final_row`` defaults to the last
    boundary row.
    """
    r = np.asarray(r_boundary, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 2:
        raise ValueError("BWT needs at least two domains")
    t = r.shape[0]
    final = r[-1] if final_row is None else np.asarray(final_row, dtype=np.float64)
    return float(np.mean([r[i, i] - final[i] for i in range(t - 1)]))


def compute_fwt(r_boundary, baseline) -> float:
    """Mean over domains 2..T of ``b[i] - R_b[i-1][i]``."""
    r = np.asarray(r_boundary, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 2:
        raise ValueError("FWT needs at least two domains")
    t = r.shape[0]
    return float(np.mean([b[i] - r[i - 1, i] for i in range(1, t)]))


@dataclass
class PurityReport:
    pseudo_domains: list[int]
    true_domains: list[int]
    table: np.ndarray  # rows: pseudo-domain, cols: true domain

    @property
    def purity(self) -> dict[int, float]:
        return {
            p: float(row.max() / row.sum())
            for p, row in zip(self.pseudo_domains, self.table)
            if row.sum() > 0
        }

    @property
    def total(self) -> int:
        return int(self.table.sum())

    def rows(self, domain_names=None) -> list[dict]:
        out = []
        for p, row in zip(self.pseudo_domains, self.table):
            rec = {"pseudo_domain": p}
            for t, n in zip(self.true_domains, row):
                rec[domain_names[t] if domain_names else str(t)] = int(n)
            rec["purity"] = round(float(row.max() / row.sum()), 6) if row.sum() else None
            out.append(rec)
        return out


def purity_report(memory_items, truth: dict[int, int]) -> PurityReport:
    """Contingency of pseudo-domain vs true domain over the memory's items.

    ``truth`` maps sample id to true domain and is evaluation-only.
    """
    pairs = [(it.domain, truth[it.sample_id]) for it in memory_items]
    pseudo = sorted({p for p, _ in pairs})
    true = sorted({t for _, t in pairs})
    table = np.zeros((len(pseudo), len(true)), dtype=np.int64)
    for p, t in pairs:
        table[pseudo.index(p), true.index(t)] += 1
    return PurityReport(pseudo, true, table)


def true_composition(memory_items, truth: dict[int, int]) -> dict[int, int]:
    return dict(sorted(Counter(truth[it.sample_id] for it in memory_items).items()))


def composition_entropy(counts) -> float:
    """Shannon entropy (nats) of a count vector or ``{key: count}`` mapping."""
    c = np.asarray(list(counts.values()) if isinstance(counts, dict) else counts, dtype=float)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log(p)).sum())
