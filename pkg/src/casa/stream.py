"""Synthetic domain-shifted image streams, the labelling oracle, budget accounting.

Content is a latent vector ``z`` rendered as a sum of smooth blob patterns;
the label is a fixed linear functional of ``z`` clipped to [20, 80]. Each domain
applies its own style (gamma, smoothing, a fixed additive texture and
per-sample noise), which shifts Gram statistics but never the label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import ConfigError, DomainConfig, StreamConfig, parse_fraction

LABEL_CENTER = 50.0
LABEL_SCALE = 26.0  # label std ~15 for uniform latents
LABEL_RANGE = (20.0, 80.0)


class BudgetExhausted(RuntimeError):
    pass


class EndOfStream(Exception):
    pass


@dataclass
class StreamSample:
    id: int
    image: np.ndarray
    label: float  # hidden: read only by the oracle and evaluators
    domain: int  # hidden: evaluation only


class ContentModel:
    """Shared content patterns and label functional (identical across domains)."""

    def __init__(self, image_size: int, latent_dim: int, nuisance_dim: int, seed: int):
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.nuisance_dim = nuisance_dim
        yy, xx = np.mgrid[0:image_size, 0:image_size] / (image_size - 1)
        patterns = []
        for _ in range(latent_dim + nuisance_dim):
            p = np.zeros((image_size, image_size))
            for _ in range(3):
                cy, cx = rng.uniform(0.15, 0.85, size=2)
                width = rng.uniform(0.08, 0.2)
                p += rng.choice([-1.0, 1.0]) * np.exp(
                    -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2)
                )
            patterns.append(p / np.abs(p).max())
        self.patterns = np.stack(patterns)
        w = rng.uniform(0.5, 1.0, size=latent_dim) * rng.choice([-1.0, 1.0], size=latent_dim)
        self.label_weights = w / np.linalg.norm(w)

    def draw_latents(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(n, self.latent_dim + self.nuisance_dim))

    def label(self, z: np.ndarray) -> np.ndarray:
        y = LABEL_CENTER + LABEL_SCALE * (z[..., : self.latent_dim] @ self.label_weights)
        return np.clip(y, *LABEL_RANGE)

    def render(self, z: np.ndarray) -> np.ndarray:
        scale = 0.5 / (self.latent_dim + self.nuisance_dim) ** 0.5
        img = 0.45 + scale * np.tensordot(z, self.patterns, axes=(-1, 0))
        return np.clip(img, 0.0, 1.0)


class StyleTransform:
    def __init__(self, spec: DomainConfig, image_size: int):
        self.spec = spec
        rng = np.random.default_rng(spec.noise_seed)
        # zero-mean high-frequency texture, fixed per domain
        tex = rng.standard_normal((image_size, image_size))
        self.texture = (tex - tex.mean()) / tex.std()

    def __call__(self, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        s = self.spec
        x = np.clip(img, 0.0, 1.0) ** s.gamma
        if s.smoothing > 0:
            x = gaussian_filter(x, s.smoothing, mode="nearest")
        x = x + s.noise_amplitude * self.texture
        if s.sample_noise > 0:
            x = x + s.sample_noise * rng.standard_normal(x.shape)
        return np.clip(x, 0.0, 1.0)


@dataclass
class Experiment:
    domain_names: list[str]
    pretrain: list[StreamSample]
    stream: list[StreamSample]
    val: dict[int, list[StreamSample]]
    test: dict[int, list[StreamSample]]
    # stream index one past the last sample of each schedule segment
    segment_ends: list[int]
    # domain ids in order of first appearance in the stream
    domain_order: list[int]
    seed: int = 0
    manifest: dict = field(default_factory=dict)

    @property
    def n_stream(self) -> int:
        return len(self.stream)

    def boundary_of(self) -> dict[int, int]:
        """Stream index at which the segment introducing each domain ends."""
        out = {}
        seen = set()
        start = 0
        for end in self.segment_ends:
            for s in self.stream[start:end]:
                if s.domain not in seen:
                    seen.add(s.domain)
                    out[s.domain] = end
            start = end
        return out

    def truth(self) -> dict[int, int]:
        samples = self.pretrain + self.stream
        return {s.id: s.domain for s in samples}


def generate_experiment(cfg: StreamConfig, seed: int) -> Experiment:
    names = [d.name for d in cfg.domains]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate domain names")
    if not cfg.schedule:
        raise ConfigError("empty schedule")
    for seg in cfg.schedule:
        for name, n in seg.items():
            if name not in names:
                raise ConfigError(f"schedule references unknown domain {name!r}")
            if n < 1:
                raise ConfigError(f"schedule count for {name!r} must be positive")
    index = {n: i for i, n in enumerate(names)}
    content = ContentModel(cfg.image_size, cfg.latent_dim, cfg.nuisance_dim, cfg.content_seed)
    styles = [StyleTransform(d, cfg.image_size) for d in cfg.domains]
    ss = np.random.SeedSequence(seed)
    pre_rng, stream_rng, order_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    next_id = 0

    def draw(domain: int, n: int, rng) -> list[StreamSample]:
        nonlocal next_id
        z = content.draw_latents(n, rng)
        labels = content.label(z)
        out = []
        for i in range(n):
            img = styles[domain](content.render(z[i]), rng)
            out.append(StreamSample(next_id, img, float(labels[i]), domain))
            next_id += 1
        return out

    pretrain = draw(0, cfg.pretrain, pre_rng)
    stream, ends = [], []
    for seg in cfg.schedule:
        part = []
        for name, n in seg.items():
            part.extend(draw(index[name], n, stream_rng))
        order = order_rng.permutation(len(part))
        stream.extend(part[i] for i in order)
        ends.append(len(stream))
    seen = []
    for s in stream:
        if s.domain not in seen:
            seen.append(s.domain)
    if 0 not in seen:
        seen.insert(0, 0)
    val = {d: draw(d, cfg.val_per_domain, eval_rng) for d in seen}
    test = {d: draw(d, cfg.test_per_domain, eval_rng) for d in seen}
    manifest = {
        "seed": seed,
        "domains": names,
        "pretrain": {names[0]: len(pretrain)},
        "continual": {names[d]: sum(1 for s in stream if s.domain == d) for d in seen},
        "validation": {names[d]: len(v) for d, v in val.items()},
        "test": {names[d]: len(v) for d, v in test.items()},
        "segment_ends": ends,
    }
    return Experiment(names, pretrain, stream, val, test, ends, seen, seed, manifest)


class Stream:
    """Sequential cursor over the continual stream."""

    def __init__(self, samples: list[StreamSample]):
        self.samples = samples
        self.pos = 0

    def exhausted(self) -> bool:
        return self.pos >= len(self.samples)

    def next_batch(self, size: int) -> list[StreamSample]:
        if self.exhausted():
            raise EndOfStream()
        batch = self.samples[self.pos:self.pos + size]
        self.pos += len(batch)
        return batch


def label_budget(beta, n_stream: int) -> int:
    return math.floor(parse_fraction(beta) * n_stream)


class Oracle:
    def __init__(self, budget_max: int):
        self.budget_max = budget_max
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.budget_max - self.used

    def label(self, sample: StreamSample) -> float:
        if self.used >= self.budget_max:
            raise BudgetExhausted(f"label budget of {self.budget_max} used up")
        self.used += 1
        return sample.label


def export_experiment(exp: Experiment, directory: str | Path) -> Path:
    """Write one ``.npz`` per split plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def dump(name, samples):
        np.savez_compressed(
            directory / f"{name}.npz",
            ids=np.array([s.id for s in samples], dtype=np.int64),
            images=np.stack([s.image for s in samples]) if samples else np.zeros((0, 0, 0)),
            labels=np.array([s.label for s in samples]),
            domains=np.array([s.domain for s in samples], dtype=np.int64),
        )

    dump("pretrain", exp.pretrain)
    dump("stream", exp.stream)
    for d in exp.val:
        dump(f"val_{d}", exp.val[d])
        dump(f"test_{d}", exp.test[d])
    manifest = dict(exp.manifest, domain_order=exp.domain_order, segment_ends=exp.segment_ends)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def import_experiment(directory: str | Path) -> Experiment:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())

    def load(name):
        with np.load(directory / f"{name}.npz") as z:
            return [StreamSample(int(i), img, float(y), int(d))
                    for i, img, y, d in zip(z["ids"], z["images"], z["labels"], z["domains"])]

    order = manifest["domain_order"]
    return Experiment(
        domain_names=manifest["domains"],
        pretrain=load("pretrain"),
        stream=load("stream"),
        val={d: load(f"val_{d}") for d in order},
        test={d: load(f"test_{d}") for d in order},
        segment_ends=manifest["segment_ends"],
        domain_order=order,
        seed=manifest["seed"],
        manifest=manifest,
    )
