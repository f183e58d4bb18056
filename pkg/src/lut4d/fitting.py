"""Fitting lattice parameters to paired images.

The objective is ``lambda_rec * MSE + lambda_tv * TV + lambda_mn * MN`` on
an unclamped float64 lattice.  Because interpolation is linear in the
lattice entries, the reconstruction gradient is the residual of each pixel
scattered onto its 16 corners with the interpolation weights.  Two
parameterizations are supported:

* ``lut_entries`` - the lattice itself is the parameter;
* ``alpha`` - the lattice is ``identity + sum_i alpha_i * basis_i`` and the
  gradient is chained through that sum.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import corner_weights
from .config import FitConfig
from .errors import DataError, DimensionError, NumericError
from .lut import BasisLutBank, Lut4D, as_image

log = logging.getLogger(__name__)

COLOR_AXES = (2, 3, 4)  # r, g, b axes of a (3, C, D, D, D) table
_NOISE_ULPS = 64


def _table(lut) -> np.ndarray:
    return np.asarray(lut.table if isinstance(lut, Lut4D) else lut, dtype=np.float64)


# -- regularizers ---------------------------------------------------------

def loss_tv(lut) -> float:
    """Mean squared difference over all color-axis neighbour pairs.

    The context axis is excluded: its slices are meant to differ.
    """
    t = _table(lut)
    total = 0.0
    count = 0
    for ax in COLOR_AXES:
        d = np.diff(t, axis=ax)
        total += float(np.sum(d * d))
        count += d.size
    return total / count


def grad_tv(lut) -> np.ndarray:
    t = _table(lut)
    g = np.zeros_like(t)
    count = sum(np.diff(t, axis=ax).size for ax in COLOR_AXES)
    for ax in COLOR_AXES:
        d = np.diff(t, axis=ax) * (2.0 / count)
        lo = [slice(None)] * 5
        hi = [slice(None)] * 5
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        g[tuple(lo)] -= d
        g[tuple(hi)] += d
    return g


def loss_mn(lut) -> float:
    """Squared decreases of each output channel along its own axis.

    Summed over the lattice and context bins, averaged over the three
    channels.  Zero exactly when every channel is non-decreasing in its own
    input coordinate.
    """
    t = _table(lut)
    total = 0.0
    for c in range(3):
        r = np.maximum(-np.diff(t[c], axis=1 + c), 0.0)
        total += float(np.sum(r * r))
    return total / 3.0


def grad_mn(lut) -> np.ndarray:
    t = _table(lut)
    g = np.zeros_like(t)
    for c in range(3):
        ax = 1 + c
        r = np.maximum(-np.diff(t[c], axis=ax), 0.0) * (2.0 / 3.0)
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        g[c][tuple(lo)] += r
        g[c][tuple(hi)] -= r
    return g


def loss_rec(pred, target) -> float:
    """Mean squared error over pixels and channels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


# -- reconstruction through the lattice -----------------------------------

@dataclass
class Batch:
    """Flattened training pixels with precomputed corner weights."""

    idx: np.ndarray  # (P, 16) into one (C, D, D, D) channel block
    w: np.ndarray  # (P, 16)
    target: np.ndarray  # (P, 3)

    @property
    def n_pixels(self) -> int:
        return self.target.shape[0]

    def take(self, rows: np.ndarray) -> Batch:
        return Batch(self.idx[rows], self.w[rows], self.target[rows])


def _image64(img) -> np.ndarray:
    as_image(img)  # shape check only; fitting keeps full precision
    return np.asarray(img, dtype=np.float64)


def make_batch(pairs, size: int, bins: int) -> Batch:
    """Build a batch from ``(content, ctx, target)`` triples."""
    idx, w, tgt = [], [], []
    for content, ctx, target in pairs:
        content = _image64(content)
        target = _image64(target)
        ctx = np.asarray(ctx, dtype=np.float64)
        if target.shape != content.shape or ctx.shape != content.shape[:2]:
            raise DimensionError("content, context and target dimensions must agree")
        i, ww = corner_weights(size, bins, content.reshape(-1, 3), ctx.reshape(-1))
        idx.append(i)
        w.append(ww)
        tgt.append(target.reshape(-1, 3).astype(np.float64))
    if not idx:
        raise DataError("empty training batch")
    return Batch(np.concatenate(idx), np.concatenate(w), np.concatenate(tgt))


def predict(table: np.ndarray, batch: Batch) -> np.ndarray:
    flat = table.reshape(3, -1)
    return np.stack([np.sum(flat[c][batch.idx] * batch.w, axis=1) for c in range(3)], axis=1)


def grad_rec(table: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """MSE and its gradient with respect to the lattice entries."""
    resid = predict(table, batch) - batch.target
    loss = float(np.mean(resid * resid))
    # A 16-term weighted sum carries rounding error of a few dozen ulp.
    # Residuals inside that band are noise; left in, Adam (step ~ g / eps
    # for |g| << eps) amplifies them into real parameter drift.
    floor = _NOISE_ULPS * np.finfo(np.float64).eps * max(1.0, float(np.abs(table).max()))
    resid[np.abs(resid) <= floor] = 0.0
    scale = 2.0 / resid.size
    block = table[0].size
    g = np.empty((3, block))
    flat_idx = batch.idx.ravel()
    for c in range(3):
        # bincount sums in index order: independent of any threading
        g[c] = np.bincount(flat_idx, weights=(batch.w * (resid[:, c:c + 1] * scale)).ravel(),
                           minlength=block)
    return loss, g.reshape(table.shape)


# -- parameterizations ----------------------------------------------------

def lut_from_params(params: np.ndarray, cfg: FitConfig, bank: BasisLutBank | None) -> np.ndarray:
    if cfg.mode == "lut_entries":
        return params
    if bank is None:
        raise DataError("alpha mode needs a basis bank")
    if params.shape != (bank.count,):
        raise DimensionError(f"alpha has shape {params.shape}, bank has {bank.count} bases")
    return bank.identity.table.astype(np.float64) + np.tensordot(params, bank.bases.astype(np.float64), axes=1)


def loss_terms(params: np.ndarray, batch: Batch, cfg: FitConfig,
               bank: BasisLutBank | None = None) -> dict[str, float]:
    table = lut_from_params(params, cfg, bank)
    l_rec = loss_rec(predict(table, batch), batch.target)
    l_tv = loss_tv(table)
    l_mn = loss_mn(table)
    return {"rec": l_rec, "tv": l_tv, "mn": l_mn,
            "total": cfg.lambda_rec * l_rec + cfg.lambda_tv * l_tv + cfg.lambda_mn * l_mn}


def total_loss(params, batch, cfg, bank=None) -> float:
    return loss_terms(params, batch, cfg, bank)["total"]


def grad_total(params: np.ndarray, batch: Batch, cfg: FitConfig,
               bank: BasisLutBank | None = None) -> tuple[dict[str, float], np.ndarray]:
    """Loss terms and the analytic gradient with respect to ``params``."""
    table = lut_from_params(params, cfg, bank)
    l_rec, g = grad_rec(table, batch)
    g *= cfg.lambda_rec
    terms = {"rec": l_rec, "tv": 0.0, "mn": 0.0}
    terms["tv"] = loss_tv(table)
    terms["mn"] = loss_mn(table)
    if cfg.lambda_tv:
        g += cfg.lambda_tv * grad_tv(table)
    if cfg.lambda_mn:
        g += cfg.lambda_mn * grad_mn(table)
    terms["total"] = cfg.lambda_rec * l_rec + cfg.lambda_tv * terms["tv"] + cfg.lambda_mn * terms["mn"]
    if cfg.mode == "alpha":
        g = np.tensordot(bank.bases.astype(np.float64), g, axes=5)
    return terms, g


# -- optimizer ------------------------------------------------------------

TRACE_FIELDS = ("step", "L_rec", "L_TV", "L_MN", "total")


@dataclass
class FitResult:
    params: np.ndarray
    lut: Lut4D  # unclamped
    trace: list[tuple] = field(default_factory=list)

    @property
    def out_of_range(self) -> float:
        """Largest distance of any lattice entry outside [0, 1]."""
        t = self.lut.table
        return float(max(0.0, -t.min(), t.max() - 1.0))

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            for row in self.trace:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def fit(pairs, cfg: FitConfig, init, callback=None) -> FitResult:
    """Adam on the total loss for ``cfg.steps`` steps.

    Args:
        pairs: ``(content, ctx, target)`` triples, or a prepared :class:`Batch`
            (then ``init`` decides the lattice geometry).
        cfg: loss weights, optimizer constants, mode and seed.
        init: a :class:`Lut4D` for ``lut_entries`` mode, a
            :class:`BasisLutBank` for ``alpha`` mode (alpha starts at zero),
            or ``(bank, alpha0)``.

    The trace row for step ``s`` holds the losses at the parameters before
    update ``s``.  A non-finite loss raises :class:`NumericError`.
    """
    bank = None
    if cfg.mode == "lut_entries":
        if not isinstance(init, Lut4D):
            raise DataError("lut_entries mode needs a Lut4D initializer")
        params = init.table.astype(np.float64).copy()
        size, bins = init.size, init.bins
    else:
        if isinstance(init, tuple):
            bank, alpha0 = init
            params = np.asarray(alpha0, dtype=np.float64).copy()
        elif isinstance(init, BasisLutBank):
            bank = init
            params = np.zeros(bank.count)
        else:
            raise DataError("alpha mode needs a BasisLutBank initializer")
        size, bins = bank.size, bank.bins

    batch = pairs if isinstance(pairs, Batch) else make_batch(pairs, size, bins)
    rng = np.random.default_rng(cfg.seed)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    trace = []
    for step in range(cfg.steps):
        sub = batch
        if 0 < cfg.sample_pixels < batch.n_pixels:
            sub = batch.take(np.sort(rng.choice(batch.n_pixels, cfg.sample_pixels, replace=False)))
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            terms, g = grad_total(params, sub, cfg, bank)
        if not np.isfinite(terms["total"]) or not np.all(np.isfinite(g)):
            bad = [k for k, val in terms.items() if not np.isfinite(val)] or ["gradient"]
            raise NumericError(f"non-finite loss at step {step}: {', '.join(bad)}")
        trace.append((step, terms["rec"], terms["tv"], terms["mn"], terms["total"]))
        if callback is not None:
            callback(step, terms)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** (step + 1))
        vhat = v / (1 - cfg.beta2 ** (step + 1))
        params = params - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
    table = lut_from_params(params, cfg, bank)
    result = FitResult(params, Lut4D(table), trace)
    if result.out_of_range > 0:
        log.info("fitted lattice leaves [0, 1] by up to %.4g; export clamps", result.out_of_range)
    return result
