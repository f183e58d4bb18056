"""Per-pixel context maps.

:func:`generate_context` is the neural path: content and style go through
separate lightweight encoders, content positions attend over style
positions, the attended features are fused with the content features and
decoded back to full resolution as a single sigmoid channel.
:func:`luminance_context` needs no weights and is the fallback.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, MissingParameterError
from .lut import as_image
from .nn import (WeightArchive, conv_layer, cross_attention, gaussian_conv,
                 norm_layer, relu, resize_bilinear, residual_block, sigmoid,
                 upsample_bilinear)

REC709 = np.array([0.2126, 0.7152, 0.0722])


def init_context_params(encoder_channels=(32, 64), residual_blocks: int = 2,
                        attention_dim: int = 64, seed: int = 0) -> WeightArchive:
    """Seeded parameters for both encoders, attention, fuse conv and head."""
    rng = np.random.default_rng(seed)
    p = WeightArchive()
    width = encoder_channels[-1]
    for enc in ("content_enc", "style_enc"):
        prev = 3
        for i, ch in enumerate(encoder_channels):
            p[f"{enc}.conv{i}.weight"] = gaussian_conv(ch, prev, 3, rng)
            p[f"{enc}.conv{i}.bias"] = np.zeros(ch, np.float32)
            p[f"{enc}.norm{i}.weight"] = np.ones(ch, np.float32)
            p[f"{enc}.norm{i}.bias"] = np.zeros(ch, np.float32)
            prev = ch
        for j in range(residual_blocks):
            for n in (1, 2):
                p[f"{enc}.res{j}.conv{n}.weight"] = gaussian_conv(width, width, 3, rng)
                p[f"{enc}.res{j}.conv{n}.bias"] = np.zeros(width, np.float32)
                p[f"{enc}.res{j}.norm{n}.weight"] = np.ones(width, np.float32)
                p[f"{enc}.res{j}.norm{n}.bias"] = np.zeros(width, np.float32)
    for name in ("q", "k", "v"):
        p[f"attn.{name}.weight"] = rng.normal(0, 1 / np.sqrt(width), (attention_dim, width)).astype(np.float32)
        p[f"attn.{name}.bias"] = np.zeros(attention_dim, np.float32)
    p["fuse.weight"] = gaussian_conv(width, attention_dim + width, 3, rng)
    p["fuse.bias"] = np.zeros(width, np.float32)
    p["head.weight"] = gaussian_conv(1, width, 1, rng)
    p["head.bias"] = np.zeros(1, np.float32)
    return p


def _count(params: WeightArchive, fmt: str) -> int:
    n = 0
    while fmt.format(n) in params:
        n += 1
    return n


def encode(img_chw: np.ndarray, params: WeightArchive) -> np.ndarray:
    """Stride-2 conv/norm/ReLU stages followed by residual blocks."""
    n_down = _count(params, "conv{}.weight")
    if n_down == 0:
        raise MissingParameterError("encoder has no 'conv0.weight'")
    x = img_chw
    for i in range(n_down):
        x = relu(norm_layer(conv_layer(x, params, f"conv{i}", stride=2, padding=1), params, f"norm{i}"))
    for j in range(_count(params, "res{}.conv1.weight")):
        x = residual_block(x, params.scope(f"res{j}"))
    return x


def _pad_to_multiple(img: np.ndarray, m: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return img
    mode = "reflect" if (h > ph and w > pw) else "edge"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)


def _limit_side(img: np.ndarray, max_side: int) -> np.ndarray:
    h, w = img.shape[:2]
    if max(h, w) <= max_side:
        return img
    s = max_side / max(h, w)
    nh, nw = max(1, round(h * s)), max(1, round(w * s))
    return np.transpose(resize_bilinear(np.transpose(img, (2, 0, 1)), nh, nw), (1, 2, 0))


def generate_context(content, style, params: WeightArchive, style_max_side: int = 256,
                     return_attention: bool = False):
    """Context map in [0, 1] with the content image's height and width.

    The content is reflect-padded to a multiple of the encoder's total
    stride and the map is cropped back afterwards.  The style image is
    downscaled so its long side is at most ``style_max_side``.
    """
    params = params if isinstance(params, WeightArchive) else WeightArchive(params)
    content = as_image(content)
    style = as_image(style)
    h, w = content.shape[:2]
    factor = 2 ** _count(params.scope("content_enc"), "conv{}.weight")
    padded = _pad_to_multiple(content, factor)
    style = _limit_side(style, style_max_side)
    cf = encode(np.transpose(padded, (2, 0, 1)), params.scope("content_enc"))
    sf = encode(np.transpose(style, (2, 0, 1)), params.scope("style_enc"))
    attended = cross_attention(cf, sf, params.scope("attn"), return_attention=return_attention)
    if return_attention:
        attended, attn = attended
    x = relu(conv_layer(np.concatenate([attended, cf]), params, "fuse", padding=1))
    x = upsample_bilinear(x, factor)
    x = conv_layer(x, params, "head", padding=0)
    if x.shape[0] != 1:
        raise DimensionError(f"context head must output 1 channel, got {x.shape[0]}")
    gamma = sigmoid(x[0])[:h, :w]
    if gamma.shape != (h, w):
        raise DimensionError(f"decoder produced {gamma.shape}, expected {(h, w)}")
    if return_attention:
        return gamma, attn
    return gamma


def box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the in-bounds ``(2r+1)^2`` neighbourhood of each pixel."""
    if radius <= 0:
        return a.astype(np.float64)
    h, w = a.shape
    s = np.zeros((h + 1, w + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(a.astype(np.float64), 0), 1)
    y = np.arange(h)
    x = np.arange(w)
    y0 = np.clip(y - radius, 0, h)[:, None]
    y1 = np.clip(y + radius + 1, 0, h)[:, None]
    x0 = np.clip(x - radius, 0, w)[None, :]
    x1 = np.clip(x + radius + 1, 0, w)[None, :]
    total = s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]
    return total / ((y1 - y0) * (x1 - x0))


def luminance_context(content, smooth_radius: int = 0) -> np.ndarray:
    """Rec.709 luma, box blurred, clamped to [0, 1]."""
    img = as_image(content)
    luma = img.astype(np.float64) @ REC709
    return np.clip(box_blur(luma, smooth_radius), 0.0, 1.0).astype(np.float32)
