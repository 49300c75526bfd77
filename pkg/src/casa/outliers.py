"""Outlier memory and discovery of new pseudo-domains from dense regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import iforest


@dataclass
class OutlierItem:
    sample_id: int
    image: np.ndarray
    embedding: np.ndarray
    age: int = 0


class OutlierMemory:
    def __init__(
        self,
        discovery_size: int = 10,
        distance_threshold: float = 1.0,
        max_age: int | None = 50,
        min_group: int = 4,
        n_trees: int = 100,
        subsample_size: int = 64,
    ):
        self.discovery_size = discovery_size
        self.distance_threshold = distance_threshold
        self.max_age = max_age
        self.min_group = min_group
        self.n_trees = n_trees
        self.subsample_size = subsample_size
        self.items: list[OutlierItem] = []

    def __len__(self) -> int:
        return len(self.items)

    def add(self, sample_id: int, image: np.ndarray, embedding: np.ndarray) -> None:
        self.items.append(OutlierItem(sample_id, image, np.asarray(embedding, dtype=np.float64)))

    def tick_and_evict(self) -> list[OutlierItem]:
        for it in self.items:
            it.age += 1
        if self.max_age is None:
            return []
        evicted = [it for it in self.items if it.age > self.max_age]
        self.items = [it for it in self.items if it.age <= self.max_age]
        return evicted

    def densest_group(self) -> list[int]:
        """Indices of the item with most neighbours closer than the threshold,
        followed by those neighbours (in memory order)."""
        emb = np.stack([it.embedding for it in self.items])
        close = cdist(emb, emb) < self.distance_threshold
        np.fill_diagonal(close, False)
        seed = int(np.argmax(close.sum(axis=1)))
        return [seed] + np.flatnonzero(close[seed]).tolist()

    def try_discover(self, seed: int = 0):
        """Return ``(members, forest)`` for a new dense group, or ``None``.

        At most one group per call. Members are removed from the memory.
        """
        if len(self.items) < self.discovery_size:
            return None
        group = self.densest_group()
        if len(group) < self.min_group:
            return None
        emb = np.stack([self.items[i].embedding for i in group])
        try:
            forest = iforest.fit(emb, self.n_trees, self.subsample_size, seed)
        except iforest.DegenerateFitError:
            return None
        taken = set(group)
        members = [self.items[i] for i in sorted(taken)]
        self.items = [it for i, it in enumerate(self.items) if i not in taken]
        return members, forest

    def sample_ids(self) -> set[int]:
        return {it.sample_id for it in self.items}
