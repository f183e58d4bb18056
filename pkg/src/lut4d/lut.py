"""Lattice types, identity construction, fusion and interpolation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._kernels import corner_weights, pack_table, quad_rows
from .errors import DimensionError

MAX_SIZE = 128


def _check_size(size: int, bins: int = 1) -> None:
    if size < 2 or size > MAX_SIZE:
        raise DimensionError(f"lattice size must be in [2, {MAX_SIZE}], got {size}")
    if bins < 1:
        raise DimensionError(f"context bin count must be >= 1, got {bins}")


@dataclass(frozen=True, eq=False)
class Lut3D:
    """A ``(3, D, D, D)`` color lattice indexed ``(channel, r, g, b)``."""

    table: np.ndarray
    title: str = ""
    domain_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    domain_max: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.ndim != 4 or t.shape[0] != 3 or not (t.shape[1] == t.shape[2] == t.shape[3]):
            raise DimensionError(f"Lut3D table must have shape (3, D, D, D), got {t.shape}")
        _check_size(t.shape[1])
        object.__setattr__(self, "table", t)

    @property
    def size(self) -> int:
        return self.table.shape[1]

    def as_lut4d(self) -> Lut4D:
        """View as a single-context-bin 4D LUT (domain is not carried over)."""
        return Lut4D(self.table[:, None])


@dataclass(frozen=True, eq=False)
class Lut4D:
    """A ``(3, C, D, D, D)`` lattice indexed ``(channel, bin, r, g, b)``.

    Entries are normally in [0, 1]; intermediate LUTs produced while fitting
    may leave that range until :meth:`clamped` is applied.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.ndim != 5 or t.shape[0] != 3 or not (t.shape[2] == t.shape[3] == t.shape[4]):
            raise DimensionError(f"Lut4D table must have shape (3, C, D, D, D), got {t.shape}")
        _check_size(t.shape[2], t.shape[1])
        object.__setattr__(self, "table", t)

    @property
    def size(self) -> int:
        return self.table.shape[2]

    @property
    def bins(self) -> int:
        return self.table.shape[1]

    def slice(self, k: int) -> Lut3D:
        return Lut3D(self.table[:, k])

    def clamped(self) -> Lut4D:
        return Lut4D(np.clip(self.table, 0.0, 1.0))

    @cached_property
    def packed(self) -> np.ndarray:
        return pack_table(self.table)


@dataclass(frozen=True, eq=False)
class BasisLutBank:
    """``N`` residual lattices sharing one ``(D, C)`` plus the identity."""

    bases: np.ndarray  # (N, 3, C, D, D, D)
    identity: Lut4D = field(init=False)

    def __post_init__(self):
        b = np.asarray(self.bases)
        if b.ndim != 6 or b.shape[1] != 3 or not (b.shape[3] == b.shape[4] == b.shape[5]):
            raise DimensionError(f"bank must have shape (N, 3, C, D, D, D), got {b.shape}")
        _check_size(b.shape[3], b.shape[2])
        object.__setattr__(self, "bases", b)
        object.__setattr__(self, "identity", make_identity_lut4d(b.shape[3], b.shape[2]))

    @property
    def count(self) -> int:
        return self.bases.shape[0]

    @property
    def size(self) -> int:
        return self.bases.shape[3]

    @property
    def bins(self) -> int:
        return self.bases.shape[2]

    @classmethod
    def random(cls, count: int, size: int, bins: int = 2, scale: float = 0.05,
               seed: int = 0) -> BasisLutBank:
        """Gaussian residual bank, deterministic in ``seed``."""
        rng = np.random.default_rng(seed)
        bases = rng.normal(0.0, scale, size=(count, 3, bins, size, size, size))
        return cls(bases.astype(np.float32))


def identity_table(size: int, bins: int = 2, dtype=np.float32) -> np.ndarray:
    _check_size(size, bins)
    ramp = np.arange(size, dtype=np.float64) / (size - 1)
    t = np.empty((3, bins, size, size, size), dtype=np.float64)
    t[0] = ramp[None, :, None, None]
    t[1] = ramp[None, None, :, None]
    t[2] = ramp[None, None, None, :]
    return t.astype(dtype)


def make_identity_lut4d(size: int, bins: int = 2) -> Lut4D:
    """Lattice whose entry ``(c, k, i_r, i_g, i_b)`` is ``i_c / (D - 1)``."""
    return Lut4D(identity_table(size, bins))


def make_identity_lut3d(size: int) -> Lut3D:
    return Lut3D(identity_table(size, 1)[:, 0])


def fuse_luts(bank: BasisLutBank, alpha, clamp: bool = True) -> Lut4D:
    """Identity plus the ``alpha``-weighted sum of the bank's residuals.

    The sum is accumulated in float64 and stored in the bank's dtype.
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.shape[0] != bank.count:
        raise DimensionError(f"got {alpha.shape[0]} weights for a bank of {bank.count}")
    residual = np.tensordot(alpha, bank.bases.astype(np.float64, copy=False), axes=1)
    fused = bank.identity.table.astype(np.float64) + residual
    if clamp:
        fused = np.clip(fused, 0.0, 1.0)
    out_dtype = bank.bases.dtype if np.issubdtype(bank.bases.dtype, np.floating) else np.float32
    return Lut4D(fused.astype(out_dtype))


def as_image(img) -> np.ndarray:
    """Validate an ``(H, W, 3)`` image; returns contiguous float32."""
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] == 0 or a.shape[1] == 0:
        raise DimensionError(f"image must have shape (H, W, 3), got {a.shape}")
    return np.ascontiguousarray(a, dtype=np.float32)


def _run_rows(img, ctx, packed, bins, threads):
    h = img.shape[0]
    out = np.empty(img.shape, dtype=np.float32)
    threads = max(1, int(threads))
    if threads == 1 or h < 2:
        quad_rows(img, ctx, packed, bins, out, 0, h)
        return out
    # Stripes are independent; each pixel is computed identically no matter
    # which worker owns it, so the result does not depend on ``threads``.
    n_stripes = min(h, threads * 4)
    edges = np.linspace(0, h, n_stripes + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(quad_rows, img, ctx, packed, bins, out, int(a), int(b))
                   for a, b in zip(edges[:-1], edges[1:]) if b > a]
        for f in futures:
            f.result()
    return out


def apply_lut4d(lut: Lut4D, content, ctx, threads: int = 1) -> np.ndarray:
    """Per-pixel quadrilinear lookup with context coordinate ``ctx[y, x]``."""
    img = as_image(content)
    ctx = np.ascontiguousarray(np.asarray(ctx), dtype=np.float32)
    if ctx.shape != img.shape[:2]:
        raise DimensionError(f"context map {ctx.shape} does not match image {img.shape[:2]}")
    return _run_rows(img, ctx, lut.packed, lut.bins, threads)


def apply_lut3d(lut: Lut3D, content, threads: int = 1) -> np.ndarray:
    """Trilinear lookup; runs the 4D kernel on a one-bin view of ``lut``."""
    img = as_image(content)
    lo = np.asarray(lut.domain_min, dtype=np.float32)
    hi = np.asarray(lut.domain_max, dtype=np.float32)
    if np.any(lo != 0.0) or np.any(hi != 1.0):
        img = np.ascontiguousarray((img - lo) / (hi - lo), dtype=np.float32)
    ctx = np.zeros(img.shape[:2], dtype=np.float32)
    return _run_rows(img, ctx, lut.as_lut4d().packed, 1, threads)


def quad_interp_points(lut: Lut4D, gamma, rgb) -> np.ndarray:
    """Evaluate the lattice at ``P`` points; ``rgb`` is ``(P, 3)``.

    Runs in float64 through the same corner weights the fitting code uses,
    so points given as ``i / (D - 1)`` reproduce stored entries to rounding
    even when that ratio has no exact binary32 form.
    """
    rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if gamma.shape[0] != rgb.shape[0]:
        raise DimensionError("gamma and rgb must have the same number of points")
    idx, w = corner_weights(lut.size, lut.bins, rgb, gamma)
    flat = np.asarray(lut.table, dtype=np.float64).reshape(3, -1)
    return np.stack([np.sum(flat[c][idx] * w, axis=1) for c in range(3)], axis=1)


def quad_interp(lut: Lut4D, gamma: float, r: float, g: float, b: float) -> tuple[float, float, float]:
    """Single-point quadrilinear interpolation over the 16 surrounding nodes."""
    v = quad_interp_points(lut, [gamma], [[r, g, b]])[0]
    return float(v[0]), float(v[1]), float(v[2])
