"""Gram-matrix style embeddings from a fixed random convolutional feature bank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConfigurationError(ValueError):
    pass


_NONLINEARITIES = {
    "relu": lambda a: np.maximum(a, 0.0),
    "none": lambda a: a,
}


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Stack of fixed 2-D convolution layers.

    ``kernels[l]`` has shape ``(n_out, n_in, kh, kw)``. Layers are applied
    with 'valid' padding; no biases, so a zero image maps to zero maps.
    """

    kernels: tuple[np.ndarray, ...]
    strides: tuple[int, ...]
    nonlinearities: tuple[str, ...]
    input_shape: tuple[int, int]
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.kernels) == len(self.strides) == len(self.nonlinearities)):
            raise ConfigurationError("kernels, strides and nonlinearities must align")
        n_in = 1
        for l, (k, s, nl) in enumerate(zip(self.kernels, self.strides, self.nonlinearities)):
            if k.ndim != 4 or k.shape[1] != n_in:
                raise ConfigurationError(
                    f"layer {l}: kernel shape {k.shape} does not take {n_in} input channels"
                )
            if s < 1:
                raise ConfigurationError(f"layer {l}: stride must be >= 1")
            if nl not in _NONLINEARITIES:
                raise ConfigurationError(f"layer {l}: unknown nonlinearity {nl!r}")
            k.setflags(write=False)
            n_in = k.shape[0]
        h, w = self.input_shape
        for l, (k, s) in enumerate(zip(self.kernels, self.strides)):
            kh, kw = k.shape[2:]
            if h < kh or w < kw:
                raise ConfigurationError(f"layer {l}: {h}x{w} input smaller than kernel")
            h, w = (h - kh) // s + 1, (w - kw) // s + 1

    @classmethod
    def random(
        cls,
        input_shape: tuple[int, int],
        channels: tuple[int, ...] = (8, 8),
        kernel_size: int = 3,
        stride: int = 2,
        nonlinearity: str = "relu",
        seed: int = 0,
        zero_mean: bool = True,
    ) -> FeatureBank:
        """Gaussian kernels scaled by ``1/sqrt(fan_in)``.

        With ``zero_mean`` every first-layer kernel sums to zero, so the bank
        ignores global brightness and responds to local structure only.
        """
        rng = np.random.default_rng(seed)
        kernels = []
        n_in = 1
        for l, n_out in enumerate(channels):
            fan_in = n_in * kernel_size * kernel_size
            k = rng.standard_normal((n_out, n_in, kernel_size, kernel_size)) / np.sqrt(fan_in)
            if zero_mean and l == 0:
                k -= k.mean(axis=(1, 2, 3), keepdims=True)
            kernels.append(k)
            n_in = n_out
        n = len(channels)
        return cls(
            kernels=tuple(kernels),
            strides=(stride,) * n,
            nonlinearities=(nonlinearity,) * n,
            input_shape=tuple(input_shape),
            seed=seed,
        )

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(k.shape[0] for k in self.kernels)

    @property
    def raw_dim(self) -> int:
        return sum(n * (n + 1) // 2 for n in self.channels)


def apply_feature_bank(img: np.ndarray, bank: FeatureBank) -> list[np.ndarray]:
    """Return one ``(N_l, h_l, w_l)`` stack of feature maps per layer."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != tuple(bank.input_shape):
        raise ConfigurationError(
            f"image shape {img.shape} does not match feature bank input {bank.input_shape}"
        )
    x = img[None]
    out = []
    for k, s, nl in zip(bank.kernels, bank.strides, bank.nonlinearities):
        kh, kw = k.shape[2:]
        win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        x = _NONLINEARITIES[nl](np.einsum("oikl,ihwkl->ohw", k, win))
        out.append(x)
    return out


def gram_matrix(maps: np.ndarray) -> np.ndarray:
    """Normalised Gram matrix ``F F^T / (N M)`` of ``N`` stacked feature maps."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 2 or maps.shape[0] == 0 or maps[0].size == 0:
        raise ValueError("gram_matrix needs at least one non-empty feature map")
    n = maps.shape[0]
    f = maps.reshape(n, -1)
    g = f @ f.T / (n * f.shape[1])
    # exact symmetry regardless of BLAS summation order
    return 0.5 * (g + g.T)


@dataclass(frozen=True, eq=False)
class SparseProjection:
    """Very sparse random projection (Li, Hastie & Church 2006 scheme).

    Entries are ``+-sqrt(s/E)`` with probability ``1/(2s)`` each and zero
    otherwise, so squared norms are preserved in expectation.
    """

    matrix: np.ndarray
    density_param: float
    seed: int | None = None

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @classmethod
    def create(
        cls, raw_dim: int, out_dim: int = 64, s: float | None = None, seed: int = 0
    ) -> SparseProjection:
        if raw_dim < 1 or out_dim < 1:
            raise ConfigurationError("projection dimensions must be positive")
        s = float(np.sqrt(raw_dim)) if s is None else float(s)
        if s < 1.0:
            raise ConfigurationError("sparsity parameter s must be >= 1")
        rng = np.random.default_rng(seed)
        u = rng.random((raw_dim, out_dim))
        half = 1.0 / (2.0 * s)
        signs = np.where(u < half, 1.0, np.where(u < 2.0 * half, -1.0, 0.0))
        return cls(matrix=signs * np.sqrt(s / out_dim), density_param=s, seed=seed)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.in_dim:
            raise ConfigurationError(
                f"raw vector dimension {raw.shape[-1]} != projection input {self.in_dim}"
            )
        return raw @ self.matrix


def raw_style_vector(img: np.ndarray, bank: FeatureBank) -> np.ndarray:
    """Concatenated upper triangles (with diagonal) of every layer's Gram matrix."""
    parts = []
    for maps in apply_feature_bank(img, bank):
        g = gram_matrix(maps)
        parts.append(g[np.triu_indices(g.shape[0])])
    return np.concatenate(parts)


def embed(img: np.ndarray, bank: FeatureBank, proj: SparseProjection) -> np.ndarray:
    if proj.in_dim != bank.raw_dim:
        raise ConfigurationError(
            f"projection expects {proj.in_dim} inputs, feature bank yields {bank.raw_dim}"
        )
    return proj(raw_style_vector(img, bank))


class StyleEmbedder:
    """Bank + projection pair, the unit the rest of the pipeline calls."""

    def __init__(self, bank: FeatureBank, proj: SparseProjection):
        if proj.in_dim != bank.raw_dim:
            raise ConfigurationError(
                f"projection expects {proj.in_dim} inputs, feature bank yields {bank.raw_dim}"
            )
        self.bank = bank
        self.proj = proj

    @classmethod
    def from_config(cls, cfg, image_size: int) -> StyleEmbedder:
        bank = FeatureBank.random(
            (image_size, image_size),
            channels=tuple(cfg.channels),
            kernel_size=cfg.kernel_size,
            stride=cfg.stride,
            nonlinearity=cfg.nonlinearity,
            seed=cfg.seed,
            zero_mean=cfg.zero_mean,
        )
        s = None if cfg.sparsity == "auto" else float(cfg.sparsity)
        proj = SparseProjection.create(bank.raw_dim, cfg.embedding_dim, s=s, seed=cfg.seed + 1)
        return cls(bank, proj)

    @property
    def dim(self) -> int:
        return self.proj.out_dim

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return embed(img, self.bank, self.proj)

    def embed_many(self, images) -> np.ndarray:
        if len(images) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self(img) for img in images])
