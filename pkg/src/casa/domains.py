"""Pseudo-domain set: membership forests, running task performance, completion."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .iforest import IsolationForest


@dataclass
class PseudoDomain:
    id: int
    forest: IsolationForest
    window_size: int
    window: deque = field(default_factory=deque)
    completed: bool = False

    def __post_init__(self):
        self.window = deque(self.window, maxlen=self.window_size)

    @property
    def running_perf(self) -> float | None:
        return float(np.mean(self.window)) if self.window else None

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "p_bar": self.running_perf,
            "completed": self.completed,
            "window": [float(v) for v in self.window],
        }


class DomainSet:
    """Ordered pseudo-domains with dense ids ``0..D-1``.

    A domain is completed once its window of the last ``window_size``
    oracle-labelled metrics is full and its mean passes ``threshold``
    (below it for regression, above it for classification). Completion is
    sticky.
    """

    def __init__(self, threshold: float, window_size: int = 5, task_kind: str = "regression"):
        if task_kind not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {task_kind!r}")
        if window_size < 1:
            raise ValueError("window size must be >= 1")
        self.threshold = threshold
        self.window_size = window_size
        self.task_kind = task_kind
        self.domains: list[PseudoDomain] = []

    def __len__(self) -> int:
        return len(self.domains)

    def __getitem__(self, i: int) -> PseudoDomain:
        return self.domains[i]

    def add_domain(self, forest: IsolationForest, completed: bool = False) -> int:
        d = PseudoDomain(id=len(self.domains), forest=forest, window_size=self.window_size)
        d.completed = completed
        self.domains.append(d)
        return d.id

    def decisions(self, e: np.ndarray) -> np.ndarray:
        """Decision values, shape ``(D,)`` for one embedding or ``(D, n)`` for a batch."""
        e = np.asarray(e, dtype=np.float64)
        if not self.domains:
            return np.zeros((0,) + e.shape[:-1])
        return np.stack([np.asarray(d.forest.decision_function(e)) for d in self.domains])

    @staticmethod
    def pick(decisions: np.ndarray) -> int | None:
        if len(decisions) == 0:
            return None
        best = int(np.argmax(decisions))  # first maximum wins ties
        return best if decisions[best] > 0 else None

    def assign(self, e: np.ndarray) -> int | None:
        return self.pick(self.decisions(e))

    def assign_many(self, embeddings: np.ndarray) -> list[int | None]:
        if len(embeddings) == 0:
            return []
        dec = self.decisions(np.atleast_2d(embeddings))
        if dec.shape[0] == 0:
            return [None] * len(embeddings)
        return [self.pick(dec[:, j]) for j in range(dec.shape[1])]

    def passes(self, value: float) -> bool:
        if self.task_kind == "regression":
            return value < self.threshold
        return value > self.threshold

    def record_performance(self, domain_id: int, metric_value: float) -> tuple[float, bool]:
        if not 0 <= domain_id < len(self.domains):
            raise KeyError(f"unknown pseudo-domain {domain_id}")
        if not np.isfinite(metric_value):
            raise ValueError("metric value must be finite")
        d = self.domains[domain_id]
        d.window.append(float(metric_value))
        p_bar = d.running_perf
        if len(d.window) == self.window_size and self.passes(p_bar):
            d.completed = True
        return p_bar, d.completed

    def training_needed(self) -> bool:
        return any(not d.completed for d in self.domains)

    def snapshot(self) -> list[dict]:
        return [d.snapshot() for d in self.domains]
