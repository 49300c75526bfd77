"""Small feed-forward regressor trained with SGD on mean absolute error."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class DivergenceError(FloatingPointError):
    pass


def metric(pred, truth) -> float:
    """Absolute error; mean absolute error when given arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    return float(np.mean(np.abs(pred - truth)))


class TaskLearner:
    """flatten -> [dense + ReLU] * len(hidden) -> dense scalar.

    Predictions are ``y_offset + y_scale * net(x - x_mean)``; the
    normalisation constants are fixed by :meth:`fit_normalization` (called by
    pretraining) and are not trained. ``hidden=()`` gives a linear model.
    """

    def __init__(self, input_dim: int, hidden=(32,), lr: float = 1e-3, seed: int = 0,
                 init: str = "he"):
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        self.lr = lr
        self.seed = seed
        self.steps = 0
        rng = np.random.default_rng(seed)
        sizes = (input_dim,) + self.hidden + (1,)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
            elif init == "he":
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            else:
                raise ValueError(f"unknown init {init!r}")
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self.x_mean = np.zeros(input_dim)
        self.y_offset = 0.0
        self.y_scale = 1.0

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def fit_normalization(self, images, labels):
        x = self._flatten(images)
        self.x_mean = x.mean(axis=0)
        labels = np.asarray(labels, dtype=np.float64)
        self.y_offset = float(labels.mean())
        self.y_scale = float(labels.std()) or 1.0

    def _flatten(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        return x.reshape(len(x), -1)

    def _forward(self, x):
        acts = [x - self.x_mean]
        h = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return self.y_offset + self.y_scale * h[:, 0], acts

    def predict_many(self, images) -> np.ndarray:
        if len(images) == 0:
            return np.zeros(0)
        return self._forward(self._flatten(images))[0]

    def predict(self, image) -> float:
        return float(self.predict_many(np.asarray(image)[None])[0])

    def loss_and_grad(self, images, labels):
        """MAE loss and its (sub)gradient w.r.t. every weight and bias."""
        x = self._flatten(images)
        y = np.asarray(labels, dtype=np.float64)
        pred, acts = self._forward(x)
        resid = pred - y
        loss = float(np.mean(np.abs(resid)))
        delta = (self.y_scale * np.sign(resid) / len(y))[:, None]
        gw, gb = [None] * len(self.weights), [None] * len(self.biases)
        for i in reversed(range(len(self.weights))):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, gw, gb

    def train_step(self, batch) -> float:
        """One SGD update on ``[(image, label), ...]``; returns the pre-update loss."""
        if len(batch) == 0:
            raise ValueError("empty training batch")
        images = np.stack([b[0] for b in batch])
        labels = np.array([b[1] for b in batch], dtype=np.float64)
        loss, gw, gb = self.loss_and_grad(images, labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at step {self.steps}")
        for w, g in zip(self.weights, gw):
            w -= self.lr * g
        for b, g in zip(self.biases, gb):
            b -= self.lr * g
        self.steps += 1
        if not all(np.all(np.isfinite(w)) for w in self.weights):
            raise DivergenceError(f"non-finite parameters after step {self.steps}")
        return loss

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for wb in zip(self.weights, self.biases) for p in wb])

    def set_flat(self, flat: np.ndarray):
        pos = 0
        for p in (p for wb in zip(self.weights, self.biases) for p in wb):
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def flat_grad(self, images, labels) -> tuple[float, np.ndarray]:
        loss, gw, gb = self.loss_and_grad(images, labels)
        return loss, np.concatenate([p.ravel() for wb in zip(gw, gb) for p in wb])

    def clone(self) -> TaskLearner:
        new = TaskLearner.__new__(TaskLearner)
        new.__dict__.update(self.__dict__)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        new.x_mean = self.x_mean.copy()
        return new

    def save(self, path: str | Path):
        """Write ``<path>.npz`` (parameters) and ``<path>.json`` (metadata)."""
        path = Path(path)
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        arrays["x_mean"] = self.x_mean
        np.savez(path.with_suffix(".npz"), **arrays)
        meta = {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "seed": self.seed,
            "steps": self.steps,
            "y_offset": self.y_offset,
            "y_scale": self.y_scale,
            "n_params": self.n_params,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TaskLearner:
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        new = cls(meta["input_dim"], meta["hidden"], meta["lr"], meta["seed"], init="zeros")
        with np.load(path.with_suffix(".npz")) as z:
            for i in range(len(new.weights)):
                new.weights[i] = z[f"w{i}"]
                new.biases[i] = z[f"b{i}"]
            new.x_mean = z["x_mean"]
        new.steps = meta["steps"]
        new.y_offset = meta["y_offset"]
        new.y_scale = meta["y_scale"]
        return new


def pretrain(learner: TaskLearner, train, val, epochs: int, batch_size: int,
             rng: np.random.Generator, normalize: bool = True) -> float:
    """Epoch-based training on ``train`` pairs; returns MAE on ``val`` pairs."""
    if len(train) < batch_size:
        raise ValueError(f"pretraining set ({len(train)}) smaller than batch size {batch_size}")
    images = np.stack([p[0] for p in train])
    labels = np.array([p[1] for p in train], dtype=np.float64)
    if normalize:
        learner.fit_normalization(images, labels)
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            try:
                learner.train_step([(images[i], labels[i]) for i in idx])
            except DivergenceError as exc:
                raise DivergenceError(f"pretraining diverged in epoch {epoch}: {exc}") from exc
    vi = np.stack([p[0] for p in val])
    vl = np.array([p[1] for p in val], dtype=np.float64)
    return metric(learner.predict_many(vi), vl)
