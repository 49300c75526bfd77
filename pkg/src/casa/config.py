"""Experiment configuration: nested dataclasses loaded from YAML."""

from __future__ import annotations

import dataclasses
import itertools
import types
import typing
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class DomainConfig:
    name: str
    gamma: float = 1.0
    noise_amplitude: float = 0.0
    noise_seed: int = 0
    smoothing: float = 0.0
    sample_noise: float = 0.01


@dataclass
class StreamConfig:
    image_size: int = 32
    latent_dim: int = 4
    nuisance_dim: int = 8
    content_seed: int = 1234
    pretrain: int = 201
    val_per_domain: int = 40
    test_per_domain: int = 40
    domains: list[DomainConfig] = field(default_factory=lambda: [DomainConfig("A")])
    # ordered segments; each maps domain name -> sample count, shuffled within the segment
    schedule: list[dict[str, int]] = field(default_factory=lambda: [{"A": 100}])


@dataclass
class StyleConfig:
    channels: list[int] = field(default_factory=lambda: [8, 8])
    kernel_size: int = 3
    stride: int = 2
    nonlinearity: str = "relu"
    zero_mean: bool = True
    embedding_dim: int = 64
    sparsity: float | str = "auto"
    seed: int = 7


@dataclass
class ForestConfig:
    n_trees: int = 100
    subsample_size: int = 64


@dataclass
class LearnerConfig:
    hidden: list[int] = field(default_factory=lambda: [32])
    lr: float = 1e-3
    init: str = "he"
    pretrain_epochs: int = 60
    batch_size: int = 8
    offline_epochs: int = 60


@dataclass
class CasaConfig:
    beta: float | str = "1/20"
    memory_size: int = 128
    k: float = 5.0
    task_kind: str = "regression"
    window: int = 5
    outlier_discovery_size: int = 40
    distance_threshold: float | str = "auto"
    distance_scale: float = 1.5
    min_group: int = 4
    max_age: int | None = 12
    input_batch: int = 8
    train_batch: int = 8
    train_steps: int = 1
    eval_every: int = 5

    @property
    def beta_fraction(self) -> Fraction:
        return parse_fraction(self.beta)


@dataclass
class SweepConfig:
    modes: list[str] = field(default_factory=lambda: ["casa", "naive"])
    beta: list[float | str] = field(default_factory=list)
    k: list[float] = field(default_factory=list)
    memory_size: list[int] = field(default_factory=list)

    def grid(self) -> list[dict]:
        axes = [(name, vals) for name in ("beta", "k", "memory_size")
                if (vals := getattr(self, name))]
        if not axes:
            return [{}]
        names = [a[0] for a in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(a[1] for a in axes))]


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    casa: CasaConfig = field(default_factory=CasaConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    sweep: SweepConfig | None = None

    def with_overrides(self, **casa_overrides) -> ExperimentConfig:
        new = dataclasses.replace(self, casa=dataclasses.replace(self.casa, **casa_overrides))
        validate(new)
        return new


MODES = ("casa", "naive", "joint", "per-domain")


def parse_fraction(value) -> Fraction:
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as exc:
            raise ConfigError(f"not a fraction: {value!r}") from exc
    return Fraction(value).limit_denominator(10**6)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _convert(arg, value, path)
            except ConfigError:
                pass
        raise ConfigError(f"{path}: {value!r} does not match {tp}")
    if _is_dataclass_type(tp):
        return from_dict(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return {_convert(args[0], k, f"{path}.{k}"): _convert(args[1], v, f"{path}.{k}")
                for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is type(None):
        if value is not None:
            raise ConfigError(f"{path}: expected null")
        return None
    raise ConfigError(f"{path}: unsupported type {tp}")


def from_dict(cls, data, path: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _convert(hints[f.name], data[f.name], f"{path}.{f.name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{path}.{f.name}: missing required key")
    return cls(**kwargs)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    c = cfg.casa
    beta = c.beta_fraction
    if not 0 < beta <= 1:
        raise ConfigError(f"config.casa.beta: must be in (0, 1], got {c.beta}")
    positive = {
        "casa.memory_size": c.memory_size, "casa.window": c.window,
        "casa.outlier_discovery_size": c.outlier_discovery_size, "casa.min_group": c.min_group,
        "casa.input_batch": c.input_batch, "casa.train_batch": c.train_batch,
        "casa.eval_every": c.eval_every, "stream.image_size": cfg.stream.image_size,
        "stream.latent_dim": cfg.stream.latent_dim, "stream.pretrain": cfg.stream.pretrain,
        "stream.val_per_domain": cfg.stream.val_per_domain,
        "stream.test_per_domain": cfg.stream.test_per_domain,
        "forest.n_trees": cfg.forest.n_trees, "style.embedding_dim": cfg.style.embedding_dim,
        "learner.batch_size": cfg.learner.batch_size,
    }
    for key, v in positive.items():
        if v < 1:
            raise ConfigError(f"config.{key}: must be >= 1, got {v}")
    if c.train_steps < 0:
        raise ConfigError("config.casa.train_steps: must be >= 0")
    if c.task_kind not in ("regression", "classification"):
        raise ConfigError(f"config.casa.task_kind: unknown kind {c.task_kind!r}")
    if c.max_age is not None and c.max_age < 0:
        raise ConfigError("config.casa.max_age: must be >= 0 or null")
    if isinstance(c.distance_threshold, str) and c.distance_threshold != "auto":
        raise ConfigError("config.casa.distance_threshold: number or 'auto'")
    if isinstance(cfg.style.sparsity, str) and cfg.style.sparsity != "auto":
        raise ConfigError("config.style.sparsity: number or 'auto'")
    if cfg.forest.subsample_size < 2:
        raise ConfigError("config.forest.subsample_size: must be >= 2")
    names = [d.name for d in cfg.stream.domains]
    if not names:
        raise ConfigError("config.stream.domains: at least one domain required")
    if len(set(names)) != len(names):
        raise ConfigError("config.stream.domains: duplicate domain names")
    if not cfg.stream.schedule:
        raise ConfigError("config.stream.schedule: at least one segment required")
    for i, seg in enumerate(cfg.stream.schedule):
        if not seg:
            raise ConfigError(f"config.stream.schedule[{i}]: empty segment")
        for name, n in seg.items():
            if name not in names:
                raise ConfigError(f"config.stream.schedule[{i}].{name}: unknown domain")
            if n < 1:
                raise ConfigError(f"config.stream.schedule[{i}].{name}: count must be >= 1")
    if cfg.sweep is not None:
        for m in cfg.sweep.modes:
            if m not in MODES:
                raise ConfigError(f"config.sweep.modes: unknown mode {m!r}")
        for b in cfg.sweep.beta:
            if not 0 < parse_fraction(b) <= 1:
                raise ConfigError(f"config.sweep.beta: {b} outside (0, 1]")
    if not cfg.seeds:
        raise ConfigError("config.seeds: at least one seed required")
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    return validate(from_dict(ExperimentConfig, data))


def loads(text: str) -> ExperimentConfig:
    return validate(from_dict(ExperimentConfig, yaml.safe_load(text) or {}))


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def write_config(cfg: ExperimentConfig, path: str | Path):
    Path(path).write_text(dumps(cfg))
