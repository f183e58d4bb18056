"""Image quality and color-distribution metrics."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DataError, DimensionError
from .lut import as_image

REC709 = np.array([0.2126, 0.7152, 0.0722])

# linear sRGB -> XYZ, D65
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)

LAB_BINS = {
    "L": (100, 0.0, 100.0),
    "a": (128, -128.0, 128.0),
    "b": (128, -128.0, 128.0),
}
HIST_BINS = 256


def _pair(a, b):
    a = as_image(a).astype(np.float64)
    b = as_image(b).astype(np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``inf`` if identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid window positions of the Rec.709 luma.

    Images smaller than the window shrink it to the largest odd size that
    fits.
    """
    a, b = _pair(a, b)
    x = a @ REC709
    y = b @ REC709
    size = min(window, x.shape[0], x.shape[1])
    if size % 2 == 0:
        size -= 1
    g = gaussian_window(size, sigma)
    half = size // 2

    def filt(img):
        out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return out[half:img.shape[0] - half, half:img.shape[1] - half]

    c1 = k1 ** 2
    c2 = k2 ** 2
    mu_x = filt(x)
    mu_y = filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def channel_histograms(img, bins: int = HIST_BINS) -> np.ndarray:
    """``(3, bins)`` normalized histograms over [0, 1]."""
    img = as_image(img).astype(np.float64).reshape(-1, 3)
    idx = np.clip(np.floor(np.clip(img, 0.0, 1.0) * bins), 0, bins - 1).astype(np.int64)
    h = np.stack([np.bincount(idx[:, c], minlength=bins) for c in range(3)]).astype(np.float64)
    return h / img.shape[0]


def _pearson(p: np.ndarray, q: np.ndarray) -> float:
    dp = p - p.mean()
    dq = q - q.mean()
    den = math.sqrt(float(np.sum(dp * dp)) * float(np.sum(dq * dq)))
    if den == 0.0:
        return 1.0 if np.array_equal(p, q) else 0.0
    return float(np.sum(dp * dq)) / den


def hist_corr(a, b, bins: int = HIST_BINS) -> float:
    """Mean over RGB of the Pearson correlation of per-channel histograms."""
    ha = channel_histograms(a, bins)
    hb = channel_histograms(b, bins)
    return float(np.mean([_pearson(ha[c], hb[c]) for c in range(3)]))


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_to_lab(img) -> np.ndarray:
    """sRGB in [0, 1] to CIELAB (D65), shape ``(..., 3)``."""
    lin = srgb_to_linear(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0))
    xyz = lin @ SRGB_TO_XYZ.T / D65_WHITE
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_histograms(img) -> list[np.ndarray]:
    lab = srgb_to_lab(as_image(img)).reshape(-1, 3)
    out = []
    for c, (n, lo, hi) in enumerate(LAB_BINS.values()):
        idx = np.clip(np.floor((lab[:, c] - lo) / (hi - lo) * n), 0, n - 1).astype(np.int64)
        out.append(np.bincount(idx, minlength=n) / lab.shape[0])
    return out


def bhattacharyya(p, q) -> float:
    """``-ln sum sqrt(p q)``; ``inf`` for disjoint supports.

    The coefficient is divided by ``sqrt(sum p * sum q)`` so rounding in the
    histogram normalization cannot push identical inputs away from zero.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    bc = float(np.sum(np.sqrt(p * q)))
    if bc <= 0.0:
        return math.inf
    bc /= math.sqrt(float(p.sum()) * float(q.sum()))
    return max(0.0, -math.log(bc))


def lab_bhattacharyya(images) -> tuple[float, float, float]:
    """Average pairwise (L*, a*, b*) Bhattacharyya distance over a set."""
    images = list(images)
    if len(images) < 2:
        raise DataError("need at least two images for pairwise distances")
    hists = [lab_histograms(im) for im in images]
    sums = [0.0, 0.0, 0.0]
    pairs = list(itertools.combinations(range(len(hists)), 2))
    for i, j in pairs:
        for c in range(3):
            sums[c] += bhattacharyya(hists[i][c], hists[j][c])
    return tuple(s / len(pairs) for s in sums)
