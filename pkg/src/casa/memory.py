"""Rehearsal memories: quota-balanced CASA memory and the naive FIFO baseline."""

from __future__ import annotations

import hashlib
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np


class MemoryInvariantError(RuntimeError):
    pass


@dataclass
class MemoryItem:
    sample_id: int
    image: np.ndarray
    label: float
    domain: int
    embedding: np.ndarray | None = None
    flagged: bool = False

    def record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_sha1": hashlib.sha1(np.ascontiguousarray(self.image).tobytes()).hexdigest(),
            "label": float(self.label),
            "domain": self.domain,
            "flagged": self.flagged,
            "embedding": None if self.embedding is None else [float(v) for v in self.embedding],
        }


class TrainingMemory:
    """Capacity-``M`` labelled store where each of ``D`` pseudo-domains keeps
    at most ``M // D`` unflagged items."""

    def __init__(self, capacity: int, rng: np.random.Generator, n_domains: int = 1):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = capacity
        self.n_domains = n_domains
        self.rng = rng
        self.items: list[MemoryItem] = []

    @classmethod
    def init_from_pretrain(cls, pretrain: list[MemoryItem], capacity: int, rng) -> TrainingMemory:
        mem = cls(capacity, rng, n_domains=1)
        take = min(capacity, len(pretrain))
        idx = np.sort(rng.choice(len(pretrain), size=take, replace=False))
        for i in idx:
            item = pretrain[i]
            item.domain = 0
            item.flagged = False
            mem.items.append(item)
        return mem

    def __len__(self) -> int:
        return len(self.items)

    @property
    def quota(self) -> int:
        return self.capacity // self.n_domains

    def unflagged_count(self, domain: int) -> int:
        return sum(1 for it in self.items if it.domain == domain and not it.flagged)

    def requota(self, n_domains: int) -> list[int]:
        """Switch to ``n_domains`` domains; flag random surplus items per domain.

        Returns the sample ids that were newly flagged.
        """
        if n_domains < self.n_domains:
            raise ValueError("pseudo-domains are never removed")
        self.n_domains = n_domains
        flagged = []
        for d in sorted({it.domain for it in self.items}):
            idx = [i for i, it in enumerate(self.items) if it.domain == d and not it.flagged]
            surplus = len(idx) - self.quota
            if surplus > 0:
                for i in sorted(self.rng.choice(idx, size=surplus, replace=False)):
                    self.items[i].flagged = True
                    flagged.append(self.items[i].sample_id)
        return flagged

    def nearest_same_domain(self, item: MemoryItem) -> int:
        """Slot of the unflagged same-domain item with the closest embedding."""
        cand = [i for i, it in enumerate(self.items) if it.domain == item.domain and not it.flagged]
        if not cand:
            raise MemoryInvariantError(
                f"domain {item.domain} is at quota but holds no replaceable item"
            )
        emb = np.stack([self.items[i].embedding for i in cand])
        d2 = ((emb - item.embedding) ** 2).sum(axis=1)
        return cand[int(np.argmin(d2))]

    def insert(self, item: MemoryItem) -> dict:
        if item.domain is None or item.domain < 0:
            raise ValueError("only items assigned to a pseudo-domain can be inserted")
        item.flagged = False
        if self.unflagged_count(item.domain) < self.quota:
            if len(self.items) < self.capacity:
                self.items.append(item)
                return {"action": "append", "slot": len(self.items) - 1, "victim": None}
            flagged = [i for i, it in enumerate(self.items) if it.flagged]
            if not flagged:
                raise MemoryInvariantError("memory full, domain under quota, nothing flagged")
            slot = int(flagged[self.rng.integers(len(flagged))])
            action = "replace_flagged"
        else:
            slot = self.nearest_same_domain(item)
            action = "replace_nearest"
        victim = self.items[slot]
        self.items[slot] = item
        self.check()
        return {"action": action, "slot": slot, "victim": victim.sample_id}

    def check(self):
        if len(self.items) > self.capacity:
            raise MemoryInvariantError("training memory over capacity")
        counts = Counter(it.domain for it in self.items if not it.flagged)
        for d, c in counts.items():
            if c > self.quota:
                raise MemoryInvariantError(f"domain {d} holds {c} unflagged > quota {self.quota}")

    def sample_batch(self, size: int, rng: np.random.Generator) -> list[tuple[np.ndarray, float]]:
        if not self.items:
            raise ValueError("cannot sample from an empty memory")
        idx = rng.integers(0, len(self.items), size=size)
        return [(self.items[i].image, self.items[i].label) for i in idx]

    def composition(self) -> dict:
        """``{"unflagged": {d: n}, "flagged": {d: n}, "total": {d: n}}``."""
        out = {"unflagged": Counter(), "flagged": Counter(), "total": Counter()}
        for it in self.items:
            out["flagged" if it.flagged else "unflagged"][it.domain] += 1
            out["total"][it.domain] += 1
        return {k: dict(sorted(v.items())) for k, v in out.items()}

    def sample_ids(self) -> set[int]:
        return {it.sample_id for it in self.items}

    def snapshot(self) -> list[dict]:
        return [it.record() for it in self.items]


class FifoMemory:
    """Quota-free memory for the naive baseline: newest item evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = capacity
        self.items: deque[MemoryItem] = deque(maxlen=capacity)

    @classmethod
    def init_from_pretrain(cls, pretrain: list[MemoryItem], capacity: int, rng) -> FifoMemory:
        mem = cls(capacity)
        take = min(capacity, len(pretrain))
        for i in np.sort(rng.choice(len(pretrain), size=take, replace=False)):
            mem.items.append(pretrain[i])
        return mem

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, item: MemoryItem) -> dict:
        victim = self.items[0].sample_id if len(self.items) == self.capacity else None
        self.items.append(item)
        return {"action": "fifo", "victim": victim}

    def sample_batch(self, size: int, rng: np.random.Generator) -> list[tuple[np.ndarray, float]]:
        if not self.items:
            raise ValueError("cannot sample from an empty memory")
        idx = rng.integers(0, len(self.items), size=size)
        return [(self.items[i].image, self.items[i].label) for i in idx]

    def composition(self) -> dict:
        c = dict(sorted(Counter(it.domain for it in self.items).items()))
        return {"unflagged": c, "flagged": {}, "total": dict(c)}

    def sample_ids(self) -> set[int]:
        return {it.sample_id for it in self.items}

    def snapshot(self) -> list[dict]:
        return [it.record() for it in self.items]
