"""Finite-difference check of the fitting gradients.

Both parameterizations are exercised on a small random problem (D=5, C=2,
8 pixels) with all three loss terms switched on.  The lattice is built so
that every own-axis step is at least 0.05 away from zero; a central
difference with h=1e-3 then never crosses the kink of the monotonicity
penalty and the check is exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FitConfig
from .fitting import grad_total, make_batch, total_loss
from .lut import BasisLutBank, identity_table

SIZE = 5
BINS = 2
PIXELS = 8
N_BASES = 100
STEP = 1e-3
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    mode: str
    coords: int
    max_rel_error: float
    worst_coord: tuple

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-10)


def kink_free_table(rng: np.random.Generator) -> np.ndarray:
    """Lattice whose own-axis steps have random sign and |step| in [0.05, 0.3]."""
    t = rng.uniform(0.0, 1.0, size=(3, BINS, SIZE, SIZE, SIZE))
    for c in range(3):
        steps = rng.uniform(0.05, 0.3, size=(BINS, SIZE - 1, SIZE, SIZE))
        steps *= rng.choice([-1.0, 1.0], size=steps.shape)
        start = rng.uniform(0.0, 1.0, size=(BINS, 1, SIZE, SIZE))
        own = np.concatenate([start, start + np.cumsum(steps, axis=1)], axis=1)
        t[c] = np.moveaxis(own, 1, 1 + c)
    return t


def _problem(rng):
    content = rng.uniform(0, 1, (1, PIXELS, 3))
    ctx = rng.uniform(0, 1, (1, PIXELS))
    target = rng.uniform(0, 1, (1, PIXELS, 3))
    return make_batch([(content, ctx, target)], SIZE, BINS)


def _numeric(params, coords, batch, cfg, bank):
    out = np.empty(len(coords))
    for n, idx in enumerate(coords):
        p = params.copy()
        p[idx] += STEP
        up = total_loss(p, batch, cfg, bank)
        p[idx] -= 2 * STEP
        down = total_loss(p, batch, cfg, bank)
        out[n] = (up - down) / (2 * STEP)
    return out


def check_lut_entries(seed: int = 0, n_coords: int = 100, corrupt=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = FitConfig(mode="lut_entries", lambda_rec=1.0, lambda_tv=1.0, lambda_mn=1.0)
    batch = _problem(rng)
    params = kink_free_table(rng)
    _, g = grad_total(params, batch, cfg)
    if corrupt is not None:
        g = corrupt(g)
    # half the coordinates where the reconstruction term acts, half anywhere
    block = params[0].size
    touched = np.unique(batch.idx[batch.w > 0])
    chan = rng.integers(0, 3, n_coords // 2)
    near = chan * block + rng.choice(touched, n_coords // 2)
    anywhere = rng.choice(params.size, n_coords - n_coords // 2, replace=False)
    flat = np.concatenate([near, anywhere])
    coords = [np.unravel_index(int(i), params.shape) for i in flat]
    analytic = np.array([g[c] for c in coords])
    err = rel_error(analytic, _numeric(params, coords, batch, cfg, None))
    worst = int(np.argmax(err))
    return CheckResult("lut_entries", len(coords), float(err[worst]), tuple(int(i) for i in coords[worst]))


def check_alpha(seed: int = 0, corrupt=None) -> CheckResult:
    """All ``N_BASES`` alpha coordinates.

    Basis 0 is solved for so that the fused lattice equals a kink-free table;
    the others are small, so a step in any alpha moves entries far less than
    the 0.05 margin.
    """
    rng = np.random.default_rng(seed + 1)
    cfg = FitConfig(mode="alpha", lambda_rec=1.0, lambda_tv=1.0, lambda_mn=1.0)
    batch = _problem(rng)
    target = kink_free_table(rng)
    alpha = rng.uniform(0.0, 1.0, N_BASES)
    alpha[0] = 1.0
    bases = rng.normal(0.0, 0.005, (N_BASES, 3, BINS, SIZE, SIZE, SIZE))
    rest = np.tensordot(alpha[1:], bases[1:], axes=1)
    bases[0] = (target - identity_table(SIZE, BINS, np.float64) - rest) / alpha[0]
    bank = BasisLutBank(bases)
    _, g = grad_total(alpha, batch, cfg, bank)
    if corrupt is not None:
        g = corrupt(g)
    coords = [(i,) for i in range(N_BASES)]
    err = rel_error(g, _numeric(alpha, coords, batch, cfg, bank))
    worst = int(np.argmax(err))
    return CheckResult("alpha", N_BASES, float(err[worst]), (worst,))


def run_gradcheck(seed: int = 0, n_coords: int = 100, corrupt=None) -> list[CheckResult]:
    """Run both modes; ``corrupt`` maps the analytic gradient before comparison."""
    return [check_lut_entries(seed, n_coords, corrupt), check_alpha(seed, corrupt)]
