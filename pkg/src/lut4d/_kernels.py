"""Compiled per-pixel interpolation kernels.

The kernels read a repacked copy of the lattice laid out as
``(D, D, D, Cp, 4)``: for every color node the three output channels of
every context bin sit next to each other (padded to 4), so a pixel touches
eight short contiguous runs instead of 48 scattered floats.  ``Cp`` is at
least 2; a single-bin LUT is duplicated so the upper bin read stays in
bounds and receives weight 0.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# nnan/ninf are left out on purpose: clamping must stay well defined.
_FASTMATH = {"nsz", "arcp", "contract", "reassoc", "afn"}


def pack_table(table: np.ndarray) -> np.ndarray:
    """Repack a ``(3, C, D, D, D)`` table into the kernel layout."""
    _, bins, size, _, _ = table.shape
    cp = max(bins, 2)
    packed = np.zeros((size, size, size, cp, 4), dtype=np.float32)
    packed[:, :, :, :bins, :3] = np.transpose(table, (2, 3, 4, 1, 0))
    if bins == 1:
        packed[:, :, :, 1, :3] = packed[:, :, :, 0, :3]
    return packed


@njit(nogil=True, fastmath=_FASTMATH, error_model="numpy", boundscheck=False, cache=True)
def quad_rows(img, ctx, pk, bins, out, y0, y1):
    """Quadrilinear lookup for rows ``y0:y1`` of an ``(H, W, 3)`` image.

    Coordinates are clamped to [0, 1].  Tensor-product weights are formed
    as products of ``f`` and ``1 - f`` so lattice nodes reproduce stored
    entries exactly.
    """
    size = pk.shape[0]
    width = img.shape[1]
    imax = size - 2
    kmax = max(bins - 2, 0)
    sc = np.float32(size - 1)
    sk = np.float32(bins - 1)
    one = np.float32(1.0)
    zero = np.float32(0.0)
    for y in range(y0, y1):
        for x in range(width):
            r = min(max(img[y, x, 0], zero), one) * sc
            g = min(max(img[y, x, 1], zero), one) * sc
            b = min(max(img[y, x, 2], zero), one) * sc
            t = min(max(ctx[y, x], zero), one) * sk
            ir = min(np.int32(r), imax)
            ig = min(np.int32(g), imax)
            ib = min(np.int32(b), imax)
            ik = min(np.int32(t), kmax)
            fr = r - np.float32(ir)
            fg = g - np.float32(ig)
            fb = b - np.float32(ib)
            fk = t - np.float32(ik)
            gr = one - fr
            gg = one - fg
            gb = one - fb
            a0 = zero
            a1 = zero
            a2 = zero
            c0 = zero
            c1 = zero
            c2 = zero
            for dr in range(2):
                wr = fr if dr else gr
                for dg in range(2):
                    wrg = wr * (fg if dg else gg)
                    for db in range(2):
                        w = wrg * (fb if db else gb)
                        v = pk[ir + dr, ig + dg, ib + db]
                        a0 += w * v[ik, 0]
                        a1 += w * v[ik, 1]
                        a2 += w * v[ik, 2]
                        c0 += w * v[ik + 1, 0]
                        c1 += w * v[ik + 1, 1]
                        c2 += w * v[ik + 1, 2]
            gk = one - fk
            out[y, x, 0] = gk * a0 + fk * c0
            out[y, x, 1] = gk * a1 + fk * c1
            out[y, x, 2] = gk * a2 + fk * c2


def corner_weights(size: int, bins: int, rgb: np.ndarray, gamma: np.ndarray):
    """Flat corner indices and weights for float64 evaluation.

    Returns ``(idx, w)`` each of shape ``(P, 16)``.  ``idx`` indexes a
    single channel block of shape ``(C, D, D, D)`` flattened; ``w`` sums to
    one per row.  Used by the fitting code, where the lattice is float64
    and gradients scatter back through the same weights.
    """
    rgb = np.clip(np.asarray(rgb, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)
    gamma = np.clip(np.asarray(gamma, dtype=np.float64).reshape(-1), 0.0, 1.0)
    pos = rgb * (size - 1)
    base = np.minimum(pos.astype(np.int64), size - 2)
    frac = pos - base
    if bins > 1:
        tk = gamma * (bins - 1)
        k0 = np.minimum(tk.astype(np.int64), bins - 2)
        fk = tk - k0
    else:
        k0 = np.zeros_like(gamma, dtype=np.int64)
        fk = np.zeros_like(gamma)
    n = rgb.shape[0]
    idx = np.empty((n, 16), dtype=np.int64)
    w = np.empty((n, 16), dtype=np.float64)
    s3 = size ** 3
    j = 0
    for dk in range(2):
        wk = fk if dk else 1.0 - fk
        kk = np.minimum(k0 + dk, bins - 1)
        for dr in range(2):
            wr = frac[:, 0] if dr else 1.0 - frac[:, 0]
            for dg in range(2):
                wg = frac[:, 1] if dg else 1.0 - frac[:, 1]
                for db in range(2):
                    wb = frac[:, 2] if db else 1.0 - frac[:, 2]
                    idx[:, j] = (kk * s3 + (base[:, 0] + dr) * size * size
                                 + (base[:, 1] + dg) * size + base[:, 2] + db)
                    w[:, j] = wk * wr * wg * wb
                    j += 1
    return idx, w
