"""Acceptance criteria on the default three-domain stream.

Each test prints one ``CRITERION n PASS|FAIL`` line; the lines are also
collected into the pytest terminal summary. Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import pdist

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, DEFAULT_CONFIG  # noqa: E402

from casa import iforest  # noqa: E402
from casa.config import parse_config  # noqa: E402
from casa.controller import run_casa, run_naive_al  # noqa: E402
from casa.evaluation import compute_bwt, compute_fwt  # noqa: E402
from casa.learner import TaskLearner, metric  # noqa: E402
from casa.memory import MemoryItem, TrainingMemory  # noqa: E402
from casa.reports import write_run  # noqa: E402
from casa.stream import generate_experiment  # noqa: E402
from casa.style import SparseProjection, gram_matrix  # noqa: E402

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
B = 1  # domain index of the under-represented mid-stream domain
LOOSE_K = 7.0


def report(n, ok, detail):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def runs():
    cfg = parse_config(DEFAULT_CONFIG)
    loose = cfg.with_overrides(k=LOOSE_K)
    out = {"cfg": cfg, "casa": {}, "naive": {}, "loose": {}, "wall": {}}
    for seed in SEEDS:
        exp = generate_experiment(cfg.stream, seed)
        t0 = time.perf_counter()
        out["casa"][seed] = run_casa(cfg, seed, exp)
        out["wall"][seed] = time.perf_counter() - t0
        out["naive"][seed] = run_naive_al(cfg, seed, exp)
        out["loose"][seed] = run_casa(loose, seed, exp)
    return out


def test_criterion_1_discovery_and_purity(runs):
    good, parts = 0, []
    for seed, r in runs["casa"].items():
        pur = r.purity.purity
        ok = r.n_discoveries >= 2 and min(pur.values()) >= 0.8
        good += ok
        parts.append(f"seed {seed}: {r.n_discoveries} new, min purity {min(pur.values()):.2f}")
    slowest = max(runs["wall"].values())
    ok = good >= 2 and slowest <= 300
    assert report(1, ok, f"{good}/3 seeds ok ({'; '.join(parts)}); slowest run {slowest:.1f}s")


def test_criterion_2_beats_naive_on_b(runs):
    casa = np.array([runs["casa"][s].final_mae[B] for s in SEEDS])
    naive = np.array([runs["naive"][s].final_mae[B] for s in SEEDS])
    wins = int((casa < naive).sum())
    gain = (naive.mean() - casa.mean()) / naive.mean()
    ok = wins >= 2 and gain >= 0.10
    assert report(2, ok, f"B MAE casa {np.round(casa, 2).tolist()} vs naive "
                         f"{np.round(naive, 2).tolist()}; wins {wins}/3, mean gain {gain:.1%}")


def test_criterion_3_budget(runs):
    all_runs = list(runs["casa"].values()) + list(runs["loose"].values())
    within = all(r.labels_used <= r.budget for r in all_runs)
    for r in all_runs:
        assert r.labels_used <= r.budget
        assert all(s["labels_used"] <= s["budget"] for s in r.steps)
    loose = [runs["loose"][s].labels_used for s in SEEDS]
    budget = runs["loose"][0].budget
    ok = within and min(loose) < budget
    assert report(3, ok, f"all runs within budget {budget}; k={LOOSE_K} labels {loose}")


def test_criterion_4_memory_balance(runs):
    casa = [runs["casa"][s].memory_entropy for s in SEEDS]
    naive = [runs["naive"][s].memory_entropy for s in SEEDS]
    wins = sum(c > n for c, n in zip(casa, naive))
    quota_ok = all(
        n <= step["quota"]
        for r in list(runs["casa"].values()) + list(runs["loose"].values())
        for step in r.steps
        for n in step["memory"]["unflagged"].values()
    )
    ok = wins >= 2 and quota_ok
    assert report(4, ok, f"entropy casa {np.round(casa, 2).tolist()} vs naive "
                         f"{np.round(naive, 2).tolist()}; quota respected at every step: {quota_ok}")


def test_criterion_5_transfer(runs):
    bwt = [runs["casa"][s].bwt for s in SEEDS]
    fwt_c = [runs["casa"][s].fwt for s in SEEDS]
    fwt_n = [runs["naive"][s].fwt for s in SEEDS]
    bwt_ok = sum(b >= 0 for b in bwt)
    fwt_ok = sum(c > n for c, n in zip(fwt_c, fwt_n))
    ok = bwt_ok >= 2 and fwt_ok >= 2
    assert report(5, ok, f"BWT {np.round(bwt, 2).tolist()} ({bwt_ok}/3 >= 0); FWT casa "
                         f"{np.round(fwt_c, 2).tolist()} vs naive {np.round(fwt_n, 2).tolist()}")


def _unit_checks():
    rng = np.random.default_rng(0)
    out = {}
    maps = rng.standard_normal((5, 6, 6))
    f = maps.reshape(5, -1)
    brute = np.array([[sum(a * b for a, b in zip(f[i], f[j])) / f.size for j in range(5)]
                      for i in range(5)])
    out["gram"] = np.abs(gram_matrix(maps) - brute).max() <= 1e-10

    proj = SparseProjection.create(72, 64, seed=8)
    x = rng.standard_normal((200, 72))
    ratio = pdist(proj(x)) / pdist(x)
    out["jl"] = np.mean(np.abs(ratio - 1) <= 0.3) >= 0.9

    cluster = rng.standard_normal((64, 8)) * 0.1
    forest = iforest.fit(cluster, 100, 64, seed=0)
    s_in, s_out = forest.anomaly_score(np.zeros(8)), forest.anomaly_score(np.full(8, 3.0))
    out["iforest"] = 0 < s_in < s_out < 1

    net = TaskLearner(4, hidden=(3,), seed=1)
    xs, ys = rng.standard_normal((6, 4)), rng.standard_normal(6)
    _, g = net.flat_grad(xs, ys)
    flat, fd, eps = net.get_flat(), np.zeros(net.n_params), 1e-6
    for i in range(net.n_params):
        for sign in (1, -1):
            p = flat.copy()
            p[i] += sign * eps
            net.set_flat(p)
            fd[i] += sign * metric(net.predict_many(xs), ys) / (2 * eps)
    net.set_flat(flat)
    out["gradient"] = np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    out["bwt_fwt"] = (compute_bwt([[5.0, 9.0], [6.0, 3.0]], [4.0, 3.0]) == 1.0
                      and compute_bwt([[5.0, 9.0], [6.0, 3.0]], [7.0, 3.0]) == -2.0
                      and compute_fwt([[1.0, 6.0], [1.0, 1.0]], [0.0, 9.0]) == 3.0)

    mem = TrainingMemory(10, rng)
    for i in range(10):
        mem.insert(MemoryItem(i, np.zeros(1), 0.0, 0, rng.standard_normal(3)))
    new = MemoryItem(99, np.zeros(1), 0.0, 0, rng.standard_normal(3))
    scan = min(mem.items, key=lambda it: ((it.embedding - new.embedding) ** 2).sum())
    out["replacement"] = mem.insert(new)["victim"] == scan.sample_id
    return out


def test_criterion_6_unit_oracles():
    checks = _unit_checks()
    ok = all(checks.values())
    assert report(6, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
                  + " (full unit suite timing: see pytest footer)")


def test_criterion_7_determinism(tmp_path):
    cfg = parse_config(DEFAULT_CONFIG)
    a = write_run(run_casa(cfg, 0), cfg, tmp_path / "a") / "steps.jsonl"
    b = write_run(run_casa(cfg, 0), cfg, tmp_path / "b") / "steps.jsonl"
    ok = a.read_bytes() == b.read_bytes()
    assert report(7, ok, f"two seed-0 runs, steps.jsonl {a.stat().st_size} bytes, identical: {ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
