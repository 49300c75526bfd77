"""The continual active-learning loop and its baselines."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import iforest
from .config import ExperimentConfig
from .domains import DomainSet
from .evaluation import (
    compute_bwt,
    compute_fwt,
    composition_entropy,
    evaluate_checkpoint,
    purity_report,
    true_composition,
)
from .learner import TaskLearner, metric, pretrain
from .memory import FifoMemory, MemoryItem, TrainingMemory
from .outliers import OutlierMemory
from .stream import Experiment, Oracle, Stream, generate_experiment, label_budget
from .style import StyleEmbedder

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    mode: str
    seed: int
    domain_names: list[str]
    domain_order: list[int]
    steps: list[dict] = field(default_factory=list)
    checkpoints: list[dict] = field(default_factory=list)
    baseline: dict[int, float] = field(default_factory=dict)
    budget: int = 0
    labels_used: int = 0
    pretrain_val_mae: float | None = None
    memory_items: list = field(default_factory=list)
    memory_composition: dict = field(default_factory=dict)
    true_composition: dict = field(default_factory=dict)
    domains: list[dict] = field(default_factory=list)
    forests: list = field(default_factory=list)
    discoveries: list[dict] = field(default_factory=list)
    sample_status: dict[int, str] = field(default_factory=dict)
    learner: TaskLearner | None = None
    truth: dict[int, int] = field(default_factory=dict)
    runtime_s: float = 0.0

    @property
    def final_mae(self) -> dict[int, float]:
        return self.checkpoints[-1]["mae"] if self.checkpoints else {}

    def r_matrix(self) -> np.ndarray:
        return np.array([[c["mae"][d] for d in self.domain_order] for c in self.checkpoints])

    def boundary_rows(self) -> np.ndarray | None:
        rows = []
        for d in self.domain_order:
            match = [c for c in self.checkpoints if d in c.get("boundary_for", [])]
            if not match:
                return None
            rows.append([match[0]["mae"][e] for e in self.domain_order])
        return np.array(rows)

    @property
    def bwt(self) -> float | None:
        rb = self.boundary_rows()
        if rb is None or len(rb) < 2:
            return None
        final = [self.final_mae[d] for d in self.domain_order]
        return compute_bwt(rb, final)

    @property
    def fwt(self) -> float | None:
        rb = self.boundary_rows()
        if rb is None or len(rb) < 2 or not self.baseline:
            return None
        return compute_fwt(rb, [self.baseline[d] for d in self.domain_order])

    @property
    def purity(self):
        return purity_report(self.memory_items, self.truth) if self.memory_items else None

    @property
    def memory_entropy(self) -> float:
        return composition_entropy(self.true_composition)

    @property
    def n_discoveries(self) -> int:
        return len(self.discoveries)

    def step_log_lines(self) -> list[str]:
        return [json.dumps(s, sort_keys=True) for s in self.steps]

    def summary(self) -> dict:
        pur = self.purity
        return {
            "mode": self.mode,
            "seed": self.seed,
            "budget": self.budget,
            "labels_used": self.labels_used,
            "pretrain_val_mae": self.pretrain_val_mae,
            "final_mae": {self.domain_names[d]: v for d, v in self.final_mae.items()},
            "baseline_mae": {self.domain_names[d]: v for d, v in self.baseline.items()},
            "bwt": self.bwt,
            "fwt": self.fwt,
            "n_pseudo_domains": len(self.domains),
            "n_discoveries": self.n_discoveries,
            "memory_true_composition": {
                self.domain_names[d]: n for d, n in self.true_composition.items()
            },
            "memory_entropy": self.memory_entropy,
            "purity": None if pur is None else {str(k): v for k, v in pur.purity.items()},
            "n_steps": len(self.steps),
            "n_checkpoints": len(self.checkpoints),
            "runtime_s": round(self.runtime_s, 3),
        }


def _jsonable_mae(row: dict[int, float]) -> dict[str, float]:
    return {str(d): v for d, v in row.items()}


class _Setup:
    """State shared by the stream-based modes: data, pretrained learner, rngs."""

    def __init__(self, cfg: ExperimentConfig, seed: int, exp: Experiment | None = None):
        self.cfg = cfg
        self.seed = seed
        self.exp = exp if exp is not None else generate_experiment(cfg.stream, seed)
        ss = np.random.SeedSequence(seed)
        init_ss, shuffle_ss, mem_ss, train_ss, forest_ss = ss.spawn(5)
        self.mem_rng = np.random.default_rng(mem_ss)
        self.train_rng = np.random.default_rng(train_ss)
        self.forest_rng = np.random.default_rng(forest_ss)
        lc = cfg.learner
        n_in = cfg.stream.image_size ** 2
        self.learner_seed = int(init_ss.generate_state(1)[0])
        self.learner = TaskLearner(n_in, lc.hidden, lc.lr, self.learner_seed, lc.init)
        self.pretrain_val_mae = pretrain(
            self.learner,
            [(s.image, s.label) for s in self.exp.pretrain],
            [(s.image, s.label) for s in self.exp.val[0]],
            lc.pretrain_epochs,
            lc.batch_size,
            np.random.default_rng(shuffle_ss),
        )
        self.test_sets = {
            d: [(s.image, s.label) for s in self.exp.test[d]] for d in self.exp.domain_order
        }
        self.boundaries = self.exp.boundary_of()
        self.truth = self.exp.truth()

    def next_forest_seed(self) -> int:
        return int(self.forest_rng.integers(2**31))

    def evaluate(self, learner, step: int, pos: int, prev_pos: int, force=False) -> dict | None:
        crossed = [d for d, end in self.boundaries.items() if prev_pos < end <= pos]
        periodic = step % self.cfg.casa.eval_every == 0
        if not (crossed or periodic or force):
            return None
        return {
            "step": step,
            "stream_pos": pos,
            "boundary_for": sorted(crossed, key=self.exp.domain_order.index),
            "mae": evaluate_checkpoint(learner, self.test_sets),
        }


class CasaController:
    """Runs the pseudo-domain, memory and oracle loop over one stream."""

    def __init__(self, cfg: ExperimentConfig, seed: int, exp: Experiment | None = None,
                 embedder: StyleEmbedder | None = None):
        self.cfg = cfg
        c = cfg.casa
        self.setup = _Setup(cfg, seed, exp)
        self.exp = self.setup.exp
        self.learner = self.setup.learner
        self.embedder = embedder or StyleEmbedder.from_config(cfg.style, cfg.stream.image_size)
        self.oracle = Oracle(label_budget(c.beta, self.exp.n_stream))
        self.stream = Stream(self.exp.stream)
        self._by_id = {s.id: s for s in self.exp.stream}
        self.step_count = 0
        self.discoveries: list[dict] = []
        self.status: dict[int, str] = {}

        pre_items = [
            MemoryItem(s.id, s.image, s.label, 0, self.embedder(s.image)) for s in self.exp.pretrain
        ]
        self.memory = TrainingMemory.init_from_pretrain(pre_items, c.memory_size, self.setup.mem_rng)
        mem_emb = np.stack([it.embedding for it in self.memory.items])
        self.domains = DomainSet(c.k, c.window, c.task_kind)
        forest0 = iforest.fit(
            mem_emb, cfg.forest.n_trees, cfg.forest.subsample_size, self.setup.next_forest_seed()
        )
        self.domains.add_domain(forest0, completed=self.domains.passes(self.setup.pretrain_val_mae))
        if c.distance_threshold == "auto":
            t = c.distance_scale * float(np.median(pdist(mem_emb)))
        else:
            t = float(c.distance_threshold)
        self.outliers = OutlierMemory(
            c.outlier_discovery_size, t, c.max_age, c.min_group,
            cfg.forest.n_trees, cfg.forest.subsample_size,
        )

    @property
    def distance_threshold(self) -> float:
        return self.outliers.distance_threshold

    def _label_and_insert(self, sample_id: int, image, embedding, domain: int,
                          track: bool = True) -> dict | None:
        """Query the oracle and store the sample.

        With ``track`` the pre-training error feeds the domain's running
        performance; discovery groups are labelled without it.
        """
        if self.oracle.remaining <= 0:
            self.status[sample_id] = "discarded"
            return None
        y = self.oracle.label(self._by_id[sample_id])
        rec = {}
        if track:
            err = metric(self.learner.predict(image), y)
            p_bar, done = self.domains.record_performance(domain, err)
            rec = {"error": err, "p_bar": p_bar, "completed": done}
        slot = self.memory.insert(MemoryItem(sample_id, image, y, domain, embedding))
        self.status[sample_id] = "labelled"
        return dict(rec, insert=slot["action"])

    def casa_step(self, batch) -> dict:
        embeddings = self.embedder.embed_many([s.image for s in batch])
        assigned = self.domains.assign_many(embeddings)
        routes = []
        for s, e, d in zip(batch, embeddings, assigned):
            if d is None:
                self.outliers.add(s.id, s.image, e)
                self.status[s.id] = "outlier"
                routes.append([s.id, "outlier", None])
            elif self.domains[d].completed:
                self.status[s.id] = "discarded"
                routes.append([s.id, "discard_completed", d])
            else:
                done = self._label_and_insert(s.id, s.image, e, d)
                routes.append([s.id, "discard_budget" if done is None else "labelled", d])

        evicted = self.outliers.tick_and_evict()
        for it in evicted:
            self.status[it.sample_id] = "evicted"

        discovery = None
        found = self.outliers.try_discover(seed=self.setup.next_forest_seed())
        if found is not None:
            members, forest = found
            new_id = self.domains.add_domain(forest)
            flagged = self.memory.requota(len(self.domains))
            labelled = 0
            for it in members:
                if self._label_and_insert(it.sample_id, it.image, it.embedding, new_id, track=False):
                    labelled += 1
            discovery = {
                "domain": new_id,
                "size": len(members),
                "labelled": labelled,
                "members": [it.sample_id for it in members],
                "flagged": len(flagged),
            }
            self.discoveries.append(dict(discovery, step=self.step_count + 1))

        losses = []
        if self.domains.training_needed():
            for _ in range(self.cfg.casa.train_steps):
                b = self.memory.sample_batch(self.cfg.casa.train_batch, self.setup.train_rng)
                losses.append(self.learner.train_step(b))

        self.step_count += 1
        self._check_invariants()
        return {
            "step": self.step_count,
            "mode": "casa",
            "stream_pos": self.stream.pos,
            "routes": routes,
            "labels_used": self.oracle.used,
            "budget": self.oracle.budget_max,
            "discovery": discovery,
            "evicted": [it.sample_id for it in evicted],
            "losses": losses,
            "train_steps": len(losses),
            "domains": self.domains.snapshot(),
            "memory": {k: {str(d): n for d, n in v.items()}
                       for k, v in self.memory.composition().items()},
            "quota": self.memory.quota,
            "outliers": len(self.outliers),
        }

    def _check_invariants(self):
        self.memory.check()
        both = self.memory.sample_ids() & self.outliers.sample_ids()
        if both:
            raise AssertionError(f"samples in both memories: {sorted(both)}")
        if self.oracle.used > self.oracle.budget_max:
            raise AssertionError("oracle budget exceeded")

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        setup = self.setup
        res = RunResult("casa", setup.seed, self.exp.domain_names, self.exp.domain_order)
        res.budget = self.oracle.budget_max
        res.pretrain_val_mae = setup.pretrain_val_mae
        res.truth = setup.truth
        row0 = evaluate_checkpoint(self.learner, setup.test_sets)
        res.baseline = dict(row0)
        res.checkpoints.append({"step": 0, "stream_pos": 0, "boundary_for": [], "mae": row0})
        while not self.stream.exhausted():
            prev = self.stream.pos
            batch = self.stream.next_batch(self.cfg.casa.input_batch)
            rec = self.casa_step(batch)
            ck = setup.evaluate(self.learner, self.step_count, self.stream.pos, prev,
                                force=self.stream.exhausted())
            if ck is not None:
                res.checkpoints.append(ck)
                rec["checkpoint"] = _jsonable_mae(ck["mae"])
            res.steps.append(rec)
        for it in self.outliers.items:
            self.status[it.sample_id] = "outlier"
        res.labels_used = self.oracle.used
        res.memory_items = list(self.memory.items)
        res.memory_composition = self.memory.composition()
        res.true_composition = true_composition(self.memory.items, setup.truth)
        res.domains = self.domains.snapshot()
        res.forests = [d.forest for d in self.domains.domains]
        res.discoveries = self.discoveries
        res.sample_status = dict(self.status)
        res.learner = self.learner
        res.runtime_s = time.perf_counter() - t0
        log.info("casa seed=%d labels=%d/%d domains=%d", setup.seed, res.labels_used,
                 res.budget, len(self.domains))
        return res


def run_casa(cfg: ExperimentConfig, seed: int, exp: Experiment | None = None) -> RunResult:
    return CasaController(cfg, seed, exp).run()


def run_naive_al(cfg: ExperimentConfig, seed: int, exp: Experiment | None = None) -> RunResult:
    """Label every n-th stream sample (n = round(1/beta)) into a FIFO memory."""
    t0 = time.perf_counter()
    c = cfg.casa
    setup = _Setup(cfg, seed, exp)
    exp = setup.exp
    learner = setup.learner
    every = max(1, round(1 / float(c.beta_fraction)))
    oracle = Oracle(label_budget(c.beta, exp.n_stream))
    pre_items = [MemoryItem(s.id, s.image, s.label, 0) for s in exp.pretrain]
    memory = FifoMemory.init_from_pretrain(pre_items, c.memory_size, setup.mem_rng)
    stream = Stream(exp.stream)
    res = RunResult("naive", seed, exp.domain_names, exp.domain_order)
    res.budget = oracle.budget_max
    res.pretrain_val_mae = setup.pretrain_val_mae
    res.truth = setup.truth
    row0 = evaluate_checkpoint(learner, setup.test_sets)
    res.baseline = dict(row0)
    res.checkpoints.append({"step": 0, "stream_pos": 0, "boundary_for": [], "mae": row0})
    step = 0
    while not stream.exhausted():
        prev = stream.pos
        batch = stream.next_batch(c.input_batch)
        routes = []
        for offset, s in enumerate(batch):
            position = prev + offset + 1
            if position % every == 0 and oracle.remaining > 0:
                y = oracle.label(s)
                memory.insert(MemoryItem(s.id, s.image, y, 0))
                res.sample_status[s.id] = "labelled"
                routes.append([s.id, "labelled", 0])
            else:
                res.sample_status[s.id] = "discarded"
                routes.append([s.id, "skipped", None])
        losses = [learner.train_step(memory.sample_batch(c.train_batch, setup.train_rng))
                  for _ in range(c.train_steps)]
        step += 1
        rec = {
            "step": step,
            "mode": "naive",
            "stream_pos": stream.pos,
            "routes": routes,
            "labels_used": oracle.used,
            "budget": oracle.budget_max,
            "losses": losses,
            "train_steps": len(losses),
            "memory": {k: {str(d): n for d, n in v.items()}
                       for k, v in memory.composition().items()},
        }
        ck = setup.evaluate(learner, step, stream.pos, prev, force=stream.exhausted())
        if ck is not None:
            res.checkpoints.append(ck)
            rec["checkpoint"] = _jsonable_mae(ck["mae"])
        res.steps.append(rec)
    res.labels_used = oracle.used
    res.memory_items = list(memory.items)
    res.memory_composition = memory.composition()
    res.true_composition = true_composition(memory.items, setup.truth)
    res.learner = learner
    res.runtime_s = time.perf_counter() - t0
    return res


def train_offline(cfg: ExperimentConfig, samples, val, seed: int) -> tuple[TaskLearner, float]:
    """Fresh learner, epoch-based training on fully labelled ``samples``."""
    lc = cfg.learner
    ss = np.random.SeedSequence(seed)
    init_ss, shuffle_ss = ss.spawn(2)
    learner = TaskLearner(cfg.stream.image_size ** 2, lc.hidden, lc.lr,
                          int(init_ss.generate_state(1)[0]), lc.init)
    val_mae = pretrain(learner, samples, val, lc.offline_epochs, lc.batch_size,
                       np.random.default_rng(shuffle_ss))
    return learner, val_mae


def _offline_result(mode, seed, exp, row, learner, t0) -> RunResult:
    res = RunResult(mode, seed, exp.domain_names, exp.domain_order)
    res.checkpoints.append({"step": 0, "stream_pos": exp.n_stream, "boundary_for": [], "mae": row})
    res.steps.append({"step": 0, "mode": mode, "stream_pos": exp.n_stream,
                      "checkpoint": _jsonable_mae(row)})
    res.truth = exp.truth()
    res.labels_used = exp.n_stream
    res.learner = learner
    res.runtime_s = time.perf_counter() - t0
    return res


def run_joint(cfg: ExperimentConfig, seed: int, exp: Experiment | None = None) -> RunResult:
    """Upper bound: one model, epoch training on pretrain + the fully labelled stream."""
    t0 = time.perf_counter()
    exp = exp if exp is not None else generate_experiment(cfg.stream, seed)
    pool = [(s.image, s.label) for s in exp.pretrain + exp.stream]
    val = [(s.image, s.label) for d in exp.domain_order for s in exp.val[d]]
    learner, _ = train_offline(cfg, pool, val, seed)
    tests = {d: [(s.image, s.label) for s in exp.test[d]] for d in exp.domain_order}
    return _offline_result("joint", seed, exp, evaluate_checkpoint(learner, tests), learner, t0)


def run_per_domain(cfg: ExperimentConfig, seed: int, exp: Experiment | None = None) -> RunResult:
    """One model per true domain, each evaluated only on its own test set."""
    t0 = time.perf_counter()
    exp = exp if exp is not None else generate_experiment(cfg.stream, seed)
    row, learner = {}, None
    for d in exp.domain_order:
        own = [s for s in exp.stream if s.domain == d]
        if d == 0:
            own = exp.pretrain + own
        pool = [(s.image, s.label) for s in own]
        if len(pool) < cfg.learner.batch_size:
            raise ValueError(f"domain {exp.domain_names[d]} has too few samples to train on")
        learner, _ = train_offline(cfg, pool, [(s.image, s.label) for s in exp.val[d]], seed)
        row.update(evaluate_checkpoint(learner, {d: [(s.image, s.label) for s in exp.test[d]]}))
    return _offline_result("per-domain", seed, exp, row, learner, t0)


RUNNERS = {
    "casa": run_casa,
    "naive": run_naive_al,
    "joint": run_joint,
    "per-domain": run_per_domain,
}
