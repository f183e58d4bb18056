"""Forward-only tensor primitives.

Feature maps are ``(C, H, W)`` float32 arrays.  Parameters come from a
:class:`WeightArchive`; nothing here trains or differentiates.  Reductions
(convolution sums, normalization statistics, softmax) accumulate in float64
and results are stored as float32.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, MissingParameterError


class WeightArchive(dict):
    """Ordered ``name -> ndarray`` mapping with prefix scoping.

    >>> w = WeightArchive({"enc.conv0.weight": np.zeros((1, 1, 1, 1))})
    >>> list(w.scope("enc.conv0"))
    ['weight']
    """

    def scope(self, prefix: str) -> WeightArchive:
        p = prefix.rstrip(".") + "."
        return WeightArchive((k[len(p):], v) for k, v in self.items() if k.startswith(p))

    def need(self, name: str) -> np.ndarray:
        try:
            return self[name]
        except KeyError:
            raise MissingParameterError(f"missing parameter {name!r}") from None

    def merged(self, prefix: str, other: dict) -> WeightArchive:
        out = WeightArchive(self)
        for k, v in other.items():
            out[f"{prefix}.{k}"] = v
        return out


_ATTN_BLOCK = 2048
_COL_BYTES = 1 << 25


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2D cross-correlation.

    Args:
        x: ``(C, H, W)`` input.
        kernel: ``(O, C, kh, kw)`` filters.
        bias: ``(O,)`` or None.
        stride: step between output samples.
        padding: zeros added on every side.

    Returns:
        ``(O, Ho, Wo)`` with ``Ho = (H + 2p - kh) // stride + 1``.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) input and (O,C,kh,kw) kernel, got {x.shape}, {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise DimensionError(f"kernel expects {kernel.shape[1]} input channels, got {x.shape[0]}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    xp = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    kh, kw = kernel.shape[2:]
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError(f"input {x.shape[1:]} too small for a {kh}x{kw} kernel")
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    c = x.shape[0]
    k2 = kernel.reshape(kernel.shape[0], -1).astype(np.float64)
    out = np.empty((kernel.shape[0], ho, wo))
    # im2col over bands of output rows; the band height caps the column
    # buffer at about _COL_BYTES
    band = max(1, _COL_BYTES // (8 * c * kh * kw * wo))
    for y0 in range(0, ho, band):
        y1 = min(ho, y0 + band)
        cols = np.empty((c, kh, kw, y1 - y0, wo))
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xp[:, i + stride * y0:i + stride * (y1 - 1) + 1:stride,
                                   j:j + stride * (wo - 1) + 1:stride]
        out[:, y0:y1] = (k2 @ cols.reshape(c * kh * kw, -1)).reshape(-1, y1 - y0, wo)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out.astype(np.float32)


def instance_norm(x, gain=None, bias=None, eps: float = 1e-5) -> np.ndarray:
    """Per-channel ``(x - mean) / sqrt(var + eps) * gain + bias`` over H x W."""
    x64 = np.asarray(x, dtype=np.float64)
    c = x64.shape[0]
    mean = x64.mean(axis=(1, 2), keepdims=True)
    var = ((x64 - mean) ** 2).mean(axis=(1, 2), keepdims=True)
    y = (x64 - mean) / np.sqrt(var + eps)
    if gain is not None:
        y = y * np.asarray(gain, dtype=np.float64).reshape(c, 1, 1)
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64).reshape(c, 1, 1)
    return y.astype(np.float32)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0).astype(np.float32)


def sigmoid(x) -> np.ndarray:
    x64 = np.asarray(x, dtype=np.float64)
    return (0.5 * (1.0 + np.tanh(0.5 * x64))).astype(np.float32)


def conv_layer(x, params: WeightArchive, name: str, stride: int = 1, padding: int | None = None):
    w = params.need(f"{name}.weight")
    b = params.get(f"{name}.bias")
    if padding is None:
        padding = w.shape[-1] // 2
    return conv2d(x, w, b, stride=stride, padding=padding)


def norm_layer(x, params: WeightArchive, name: str):
    return instance_norm(x, params.need(f"{name}.weight"), params.need(f"{name}.bias"))


def residual_block(x, params: WeightArchive) -> np.ndarray:
    """``x + IN(conv(relu(IN(conv(x)))))`` with 3x3 same-padded convs.

    ``params`` holds ``conv1.*``, ``norm1.*``, ``conv2.*``, ``norm2.*``.
    """
    h = conv_layer(x, params, "conv1")
    h = relu(norm_layer(h, params, "norm1"))
    h = conv_layer(h, params, "conv2")
    h = norm_layer(h, params, "norm2")
    if h.shape != np.shape(x):
        raise DimensionError(f"residual branch changed shape {np.shape(x)} -> {h.shape}")
    return (np.asarray(x, dtype=np.float32) + h).astype(np.float32)


def max_pool_global(x) -> np.ndarray:
    """Per-channel spatial maximum of a ``(C, H, W)`` map."""
    return np.asarray(x).max(axis=(1, 2))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Max-shifted exponential normalization, float64."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _linear(params: WeightArchive, name: str, x2d: np.ndarray) -> np.ndarray:
    """Apply ``weight @ x + bias`` to a ``(in, L)`` matrix."""
    w = np.asarray(params.need(f"{name}.weight"), dtype=np.float64)
    if w.shape[1] != x2d.shape[0]:
        raise DimensionError(f"{name}.weight expects {w.shape[1]} inputs, got {x2d.shape[0]}")
    y = w @ x2d
    b = params.get(f"{name}.bias")
    if b is not None:
        y += np.asarray(b, dtype=np.float64)[:, None]
    return y


def cross_attention(q_feat, kv_feat, proj: WeightArchive, return_attention: bool = False):
    """Scaled dot-product attention from query positions onto key positions.

    ``proj`` holds ``q.*``, ``k.*``, ``v.*`` linear maps (weight ``(d, C)``).
    Spatial grids are flattened to sequences; every output position is a
    convex combination of the projected value rows.

    Returns:
        ``(d, h, w)`` attended features on the query grid, plus the
        ``(h*w, hs*ws)`` attention matrix when ``return_attention`` is set.
    """
    q_feat = np.asarray(q_feat)
    kv_feat = np.asarray(kv_feat)
    cq, h, w = q_feat.shape
    ck = kv_feat.shape[0]
    q = _linear(proj, "q", q_feat.reshape(cq, -1).astype(np.float64)).T
    k = _linear(proj, "k", kv_feat.reshape(ck, -1).astype(np.float64)).T
    v = _linear(proj, "v", kv_feat.reshape(ck, -1).astype(np.float64)).T
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    d = q.shape[1]
    scale = 1.0 / np.sqrt(d)
    out = np.empty((q.shape[0], v.shape[1]))
    attn = np.empty((q.shape[0], k.shape[0])) if return_attention else None
    # query blocks bound the size of the score matrix
    for s in range(0, q.shape[0], _ATTN_BLOCK):
        a = softmax(q[s:s + _ATTN_BLOCK] @ k.T * scale, axis=1)
        out[s:s + _ATTN_BLOCK] = a @ v
        if attn is not None:
            attn[s:s + _ATTN_BLOCK] = a
    out = out.T.reshape(v.shape[1], h, w).astype(np.float32)
    if return_attention:
        return out, attn
    return out


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a ``(C, H, W)`` map."""
    x = np.asarray(x, dtype=np.float64)
    _, h, w = x.shape

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    rows = x[:, y0, :] * (1 - fy)[None, :, None] + x[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return out.astype(np.float32)


def upsample_bilinear(x, factor: int) -> np.ndarray:
    """Integer-factor bilinear upsampling (align-corners off)."""
    _, h, w = np.shape(x)
    if factor == 1:
        return np.asarray(x, dtype=np.float32).copy()
    return resize_bilinear(x, h * factor, w * factor)


def mlp_forward(v, layers: WeightArchive) -> np.ndarray:
    """Affine layers ``0, 1, ...`` with ReLU between them; last layer linear."""
    h = np.asarray(v, dtype=np.float64).reshape(-1, 1)
    n = 0
    while f"{n}.weight" in layers:
        n += 1
    if n == 0:
        raise MissingParameterError("MLP has no layers (expected '0.weight')")
    for i in range(n):
        h = _linear(layers, str(i), h)
        if i < n - 1:
            h = np.maximum(h, 0.0)
    return h[:, 0].astype(np.float32)


def gaussian_conv(out_ch: int, in_ch: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """He-scaled Gaussian kernel used by the seeded parameter generators."""
    std = np.sqrt(2.0 / (in_ch * k * k))
    return rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(np.float32)
