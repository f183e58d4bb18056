"""Style image -> basis weights -> fused 4D LUT.

Multi-scale style features are reduced by a per-level 3x3 convolution,
max-pooled over space, concatenated and passed through a small MLP whose
softmax output weights the basis bank.  Features come from a
:class:`FeatureProvider`: either a seeded stride-2 conv stack (``builtin``)
or pyramids exported by an external encoder (``file``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError
from .lut import BasisLutBank, Lut4D, as_image, fuse_luts
from .nn import (WeightArchive, conv_layer, gaussian_conv, max_pool_global,
                 mlp_forward, relu, softmax)

N_LEVELS = 4


@dataclass
class FeatureProvider:
    mode: str = "builtin"  # or "file"
    seed: int = 0
    channels: tuple[int, ...] = (16, 32, 64, 128)
    path: Path | None = None
    params: WeightArchive = field(default_factory=WeightArchive, repr=False)

    def __post_init__(self):
        if self.mode not in ("builtin", "file"):
            raise DataError(f"unknown feature provider mode {self.mode!r}")
        if self.mode == "file" and self.path is None:
            raise DataError("file provider needs a path")
        if self.mode == "builtin" and not self.params:
            self.params = init_feature_provider(self.channels, self.seed)

    @classmethod
    def builtin(cls, seed: int = 0, channels=(16, 32, 64, 128)) -> FeatureProvider:
        return cls("builtin", seed=seed, channels=tuple(channels))

    @classmethod
    def from_file(cls, path) -> FeatureProvider:
        return cls("file", path=Path(path))


def init_feature_provider(channels=(16, 32, 64, 128), seed: int = 0) -> WeightArchive:
    if len(channels) != N_LEVELS:
        raise DimensionError(f"need {N_LEVELS} pyramid channel counts, got {len(channels)}")
    rng = np.random.default_rng(seed)
    params = WeightArchive()
    prev = 3
    for i, ch in enumerate(channels):
        params[f"level{i}.weight"] = gaussian_conv(ch, prev, 3, rng)
        params[f"level{i}.bias"] = np.zeros(ch, dtype=np.float32)
        prev = ch
    return params


def init_weight_generator(level_channels=(16, 32, 64, 128), n_bases: int = 64,
                          reduce_channels: int = 64, hidden: int = 256,
                          seed: int = 0) -> WeightArchive:
    """Seeded parameters: ``reduce{d}.*`` convs and a two-layer ``mlp.*``."""
    rng = np.random.default_rng(seed)
    params = WeightArchive()
    for d, ch in enumerate(level_channels):
        params[f"reduce{d}.weight"] = gaussian_conv(reduce_channels, ch, 3, rng)
        params[f"reduce{d}.bias"] = np.zeros(reduce_channels, dtype=np.float32)
    n_in = reduce_channels * len(level_channels)
    params["mlp.0.weight"] = rng.normal(0, np.sqrt(2.0 / n_in), (hidden, n_in)).astype(np.float32)
    params["mlp.0.bias"] = np.zeros(hidden, dtype=np.float32)
    params["mlp.1.weight"] = rng.normal(0, np.sqrt(1.0 / hidden), (n_bases, hidden)).astype(np.float32)
    params["mlp.1.bias"] = np.zeros(n_bases, dtype=np.float32)
    return params


def _check_pyramid(levels) -> list[np.ndarray]:
    levels = [np.asarray(l, dtype=np.float32) for l in levels]
    if len(levels) != N_LEVELS:
        raise DimensionError(f"feature pyramid needs {N_LEVELS} levels, got {len(levels)}")
    for a in levels:
        if a.ndim != 3 or min(a.shape) == 0:
            raise DimensionError(f"pyramid level must be a non-empty (C, H, W) map, got {a.shape}")
    areas = [a.shape[1] * a.shape[2] for a in levels]
    if any(b >= a for a, b in zip(areas, areas[1:])):
        raise DimensionError(f"pyramid levels must shrink fine to coarse, got areas {areas}")
    return levels


def extract_features(style, provider: FeatureProvider) -> list[np.ndarray]:
    """Four feature maps ordered fine to coarse."""
    if provider.mode == "file":
        from .formats import read_weights

        arch = read_weights(provider.path)
        missing = [f"level{i}" for i in range(N_LEVELS) if f"level{i}" not in arch]
        if missing:
            raise DataError(f"pyramid file {provider.path} lacks {missing}")
        return _check_pyramid([arch[f"level{i}"] for i in range(N_LEVELS)])
    img = as_image(style)
    x = np.transpose(img, (2, 0, 1))
    levels = []
    for i in range(N_LEVELS):
        x = relu(conv_layer(x, provider.params, f"level{i}", stride=2, padding=1))
        levels.append(x)
    return _check_pyramid(levels)


def pyramid_descriptor(levels, params: WeightArchive) -> np.ndarray:
    """Concatenated max-pooled reduced features (length ``4 * reduce``)."""
    parts = []
    for d, feat in enumerate(levels):
        parts.append(max_pool_global(relu(conv_layer(feat, params, f"reduce{d}", padding=1))))
    return np.concatenate(parts)


def generate_weights(levels, params: WeightArchive) -> np.ndarray:
    """Softmax weights over the basis bank; non-negative, sums to one."""
    levels = _check_pyramid(levels)
    params = params if isinstance(params, WeightArchive) else WeightArchive(params)
    logits = mlp_forward(pyramid_descriptor(levels, params), params.scope("mlp"))
    return softmax(logits)


def style_to_lut(style, provider: FeatureProvider, params: WeightArchive,
                 bank: BasisLutBank) -> Lut4D:
    alpha = generate_weights(extract_features(style, provider), params)
    return fuse_luts(bank, alpha, clamp=True)
