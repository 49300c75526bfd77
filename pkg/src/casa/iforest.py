"""Isolation forest (Liu, Ting & Zhou 2008) used as a one-class membership test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.5772156649


class DegenerateFitError(ValueError):
    pass


def c_factor(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` points."""
    if n < 2:
        raise ValueError(f"c_factor needs n >= 2, got {n}")
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def _leaf_adjust(size: int) -> float:
    return c_factor(size) if size >= 2 else 0.0


@dataclass(frozen=True, eq=False)
class ITree:
    """Array-encoded isolation tree; node 0 is the root.

    ``feature[i] == -1`` marks an external node whose ``size`` is the number
    of training points that reached it. Points with ``x[f] < threshold`` go
    left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    height_limit: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def path_length(self, x: np.ndarray) -> float:
        node, depth = 0, 0
        while self.feature[node] >= 0:
            f = self.feature[node]
            node = self.left[node] if x[f] < self.threshold[node] else self.right[node]
            depth += 1
        return depth + _leaf_adjust(int(self.size[node]))

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "size": self.size.tolist(),
            "height_limit": self.height_limit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ITree:
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            size=np.asarray(d["size"], dtype=np.int64),
            height_limit=int(d["height_limit"]),
        )


def build_tree(x: np.ndarray, height_limit: int, rng: np.random.Generator) -> ITree:
    feature, threshold, left, right, size = [], [], [], [], []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(idx))
        if len(idx) <= 1 or depth >= height_limit:
            return node
        sub = x[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        # only features with spread can separate; none left means duplicates
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            return node
        f = int(splittable[rng.integers(len(splittable))])
        t = rng.uniform(lo[f], hi[f])
        while not lo[f] < t < hi[f]:
            t = rng.uniform(lo[f], hi[f])
        go_left = sub[:, f] < t
        feature[node] = f
        threshold[node] = t
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(x)), 0)
    return ITree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        size=np.asarray(size, dtype=np.int64),
        height_limit=height_limit,
    )


class IsolationForest:
    """Fitted forest. Immutable after construction; use :func:`fit` to build one."""

    def __init__(self, trees: list[ITree], subsample_size: int, seed: int | None = None):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        if subsample_size < 2:
            raise ValueError("subsample size must be >= 2")
        self.trees = tuple(trees)
        self.subsample_size = subsample_size
        self.seed = seed
        self._pack()

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _pack(self):
        # concatenate all trees so one traversal loop handles every tree
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees[:-1]])
        self._roots = offsets.astype(np.int64)
        self._feature = np.concatenate([t.feature for t in self.trees])
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        self._left = np.concatenate(
            [np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)]
        )
        self._right = np.concatenate(
            [np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)]
        )
        self._adjust = np.array(
            [_leaf_adjust(int(s)) for t in self.trees for s in t.size], dtype=np.float64
        )
        self._max_height = max(t.height_limit for t in self.trees)
        self._c = c_factor(self.subsample_size)

    def mean_path_length(self, x: np.ndarray) -> np.ndarray:
        """E[h(x)] over trees for each row of ``x`` (or a single vector)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        node = np.repeat(self._roots[:, None], n, axis=1)
        depth = np.zeros(node.shape, dtype=np.float64)
        cols = np.broadcast_to(np.arange(n), node.shape)
        for _ in range(self._max_height):
            f = self._feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = x[cols, np.where(internal, f, 0)] < self._threshold[node]
            nxt = np.where(go_left, self._left[node], self._right[node])
            node = np.where(internal, nxt, node)
            depth += internal
        return (depth + self._adjust[node]).mean(axis=0)

    def anomaly_score(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        s = np.exp2(-self.mean_path_length(x) / self._c)
        return float(s[0]) if x.ndim == 1 else s

    def decision_function(self, x: np.ndarray) -> np.ndarray | float:
        """``0.5 - score``; positive means inlier."""
        return 0.5 - self.anomaly_score(x)

    def to_dict(self) -> dict:
        return {
            "kind": "isolation_forest",
            "subsample_size": self.subsample_size,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> IsolationForest:
        if d.get("kind") != "isolation_forest":
            raise ValueError("not an isolation forest snapshot")
        return cls([ITree.from_dict(t) for t in d["trees"]], d["subsample_size"], d["seed"])


def fit(points, n_trees: int = 100, subsample_size: int = 64, seed: int = 0) -> IsolationForest:
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if subsample_size < 2:
        raise ValueError("subsample size must be >= 2")
    if len(x) < 2 or len(np.unique(x, axis=0)) < 2:
        raise DegenerateFitError("isolation forest needs at least 2 distinct points")
    psi = min(subsample_size, len(x))
    height_limit = math.ceil(math.log2(psi))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        idx = rng.choice(len(x), size=psi, replace=False) if psi < len(x) else np.arange(len(x))
        trees.append(build_tree(x[idx], height_limit, rng))
    return IsolationForest(trees, psi, seed)
