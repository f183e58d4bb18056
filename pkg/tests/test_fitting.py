import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lut4d.config import FitConfig
from lut4d.errors import DataError, DimensionError, NumericError
from lut4d.fitting import (grad_total, fit, loss_mn, loss_rec, loss_terms, loss_tv, make_batch,
                           predict)
from lut4d.gradcheck import kink_free_table, rel_error, run_gradcheck
from lut4d.lut import BasisLutBank, Lut4D, identity_table, make_identity_lut4d, quad_interp_points
from oracles import mn_loop, tv_loop


def reversed_identity(size, bins):
    return 1.0 - identity_table(size, bins, np.float64)


# -- regularizers ---------------------------------------------------------

def test_tv_cases(rng):
    assert loss_tv(np.full((3, 2, 4, 4, 4), 0.3)) == 0.0
    ident = identity_table(3, 2, np.float64)
    assert loss_tv(ident) == pytest.approx(tv_loop(ident), abs=1e-15)
    assert loss_tv(ident) == pytest.approx(1 / 12, abs=1e-15)
    t = rng.uniform(0, 1, (3, 2, 4, 4, 4))
    assert loss_tv(2 * t) == pytest.approx(4 * loss_tv(t), rel=1e-12)
    assert loss_tv(t) == pytest.approx(tv_loop(t), rel=1e-12)


def test_tv_ignores_context_axis():
    t = identity_table(4, 2, np.float64)
    t[:, 1] += 0.4
    assert loss_tv(t) == loss_tv(identity_table(4, 2, np.float64))


def test_mn_cases(rng):
    assert loss_mn(identity_table(5, 2, np.float64)) == 0.0
    assert loss_mn(np.full((3, 2, 4, 4, 4), 0.7)) == 0.0
    rev = reversed_identity(3, 2)
    assert loss_mn(rev) == pytest.approx(mn_loop(rev), abs=1e-15)
    assert loss_mn(rev) == pytest.approx(9.0, abs=1e-12)
    t = rng.uniform(0, 1, (3, 2, 4, 4, 4))
    assert loss_mn(t) == pytest.approx(mn_loop(t), rel=1e-12)


def test_mn_only_own_axis():
    t = identity_table(4, 1, np.float64)
    t[0] = t[0][:, :, ::-1, :]  # red now decreases along green
    assert loss_mn(t) == 0.0


def test_rec_cases(rng):
    a = rng.uniform(0, 1, (5, 6, 3))
    assert loss_rec(a, a) == 0.0
    assert loss_rec(a + 0.1, a) == pytest.approx(0.01, abs=1e-12)
    b = rng.uniform(0, 1, (5, 6, 3))
    ref = sum((a[i, j, c] - b[i, j, c]) ** 2 for i in range(5) for j in range(6) for c in range(3)) / 90
    assert loss_rec(a, b) == pytest.approx(ref, abs=1e-9)
    with pytest.raises(DimensionError):
        loss_rec(a, b[:, :5])


# -- gradient ----------------------------------------------------------------

def test_zero_residual_zero_gradient(rng):
    ident = make_identity_lut4d(5, 2)
    img = rng.uniform(0, 1, (4, 4, 3))
    ctx = rng.uniform(0, 1, (4, 4))
    batch = make_batch([(img, ctx, quad_interp_points(ident, ctx.ravel(), img.reshape(-1, 3)).reshape(img.shape))],
                       5, 2)
    cfg = FitConfig(lambda_tv=0, lambda_mn=0)
    _, g = grad_total(ident.table.astype(np.float64), batch, cfg)
    assert np.abs(g).max() <= 1e-12


def test_node_pixel_gradient_is_one_hot(rng):
    t = rng.uniform(0, 1, (3, 2, 5, 5, 5))
    content = np.array([[[0.25, 0.5, 1.0]]])
    ctx = np.array([[1.0]])
    target = np.zeros((1, 1, 3))
    cfg = FitConfig(lambda_tv=0, lambda_mn=0)
    _, g = grad_total(t, make_batch([(content, ctx, target)], 5, 2), cfg)
    nz = np.argwhere(g != 0)
    assert len(nz) == 3 and all(tuple(r[1:]) == (1, 1, 2, 4) for r in nz)
    for c in range(3):
        assert g[c, 1, 1, 2, 4] == pytest.approx(2 * t[c, 1, 1, 2, 4] / 3)


def test_gradcheck_both_modes():
    results = run_gradcheck(seed=0)
    for r in results:
        assert r.coords >= 100 and r.max_rel_error < 1e-4, r


def test_gradcheck_detects_corruption():
    results = run_gradcheck(seed=0, corrupt=lambda g: g * 1.001)
    assert not any(r.passed for r in results)


def test_kink_free_table_margin():
    t = kink_free_table(np.random.default_rng(0))
    for c in range(3):
        assert np.abs(np.diff(t[c], axis=1 + c)).min() >= 0.05 - 1e-12


@given(st.integers(0, 2**31 - 1))
def test_prop_gradcheck_seeds(seed):
    for r in run_gradcheck(seed=seed, n_coords=20):
        assert r.passed, r


def test_rel_error_floor():
    assert rel_error(np.array([0.0]), np.array([0.0]))[0] == 0.0


def test_mode_parameter_mismatch(rng):
    bank = BasisLutBank.random(3, 3, 2)
    batch = make_batch([(np.zeros((1, 1, 3)), np.zeros((1, 1)), np.zeros((1, 1, 3)))], 3, 2)
    with pytest.raises(DimensionError):
        grad_total(np.zeros(4), batch, FitConfig(mode="alpha"), bank)
    with pytest.raises(DataError):
        grad_total(np.zeros(3), batch, FitConfig(mode="alpha"), None)


def test_batch_dimension_checks():
    with pytest.raises(DimensionError):
        make_batch([(np.zeros((2, 2, 3)), np.zeros((2, 3)), np.zeros((2, 2, 3)))], 3, 2)
    with pytest.raises(DataError):
        make_batch([], 3, 2)


def test_predict_matches_point_evaluator(rng):
    lut = Lut4D(rng.uniform(0, 1, (3, 2, 5, 5, 5)))
    img = rng.uniform(0, 1, (6, 7, 3))
    ctx = rng.uniform(0, 1, (6, 7))
    batch = make_batch([(img, ctx, img)], 5, 2)
    ref = quad_interp_points(lut, ctx.ravel(), img.reshape(-1, 3))
    assert np.abs(predict(lut.table, batch) - ref).max() <= 1e-12


# -- fit ------------------------------------------------------------------

def _pairs(rng, lut, n=2, h=12, w=12):
    out = []
    for _ in range(n):
        img = rng.uniform(0, 1, (h, w, 3))
        ctx = rng.uniform(0, 1, (h, w))
        out.append((img, ctx, quad_interp_points(lut, ctx.ravel(), img.reshape(-1, 3)).reshape(img.shape)))
    return out


def test_fit_already_optimal_stays(rng):
    ident = make_identity_lut4d(5, 2)
    imgs = [rng.uniform(0, 1, (8, 8, 3)) for _ in range(2)]
    pairs = [(im, rng.uniform(0, 1, (8, 8)), im) for im in imgs]
    res = fit(pairs, FitConfig(lambda_tv=0.0, steps=50), ident)
    assert max(r[4] for r in res.trace) <= 1e-20
    assert np.abs(res.lut.table - ident.table).max() <= 1e-6


def test_fit_mn_descends_from_inverted(rng):
    init = Lut4D(reversed_identity(5, 2))
    pairs = _pairs(rng, make_identity_lut4d(5, 2))
    res = fit(pairs, FitConfig(lambda_mn=100.0, steps=100), init)
    assert loss_mn(res.lut.table) < loss_mn(init.table)


def test_fit_small_lr_monotone_descent(rng):
    target = Lut4D(np.clip(identity_table(5, 2, np.float64) ** 1.5, 0, 1))
    res = fit(_pairs(rng, target), FitConfig(learning_rate=1e-3, steps=10), make_identity_lut4d(5, 2))
    totals = [r[4] for r in res.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))


@given(st.integers(0, 2**31 - 1))
def test_prop_descent_first_steps(seed):
    rng = np.random.default_rng(seed)
    target = Lut4D(rng.uniform(0, 1, (3, 2, 3, 3, 3)))
    res = fit(_pairs(rng, target, 1, 6, 6), FitConfig(learning_rate=1e-3, steps=10, lambda_mn=1.0),
              make_identity_lut4d(3, 2))
    totals = [r[4] for r in res.trace]
    assert all(b <= a + 1e-15 for a, b in zip(totals, totals[1:]))


def test_fit_reproducible_trace(rng):
    pairs = _pairs(rng, Lut4D(rng.uniform(0, 1, (3, 2, 5, 5, 5))), 2, 16, 16)
    cfg = FitConfig(steps=30, seed=3, sample_pixels=100)
    a = fit(pairs, cfg, make_identity_lut4d(5, 2))
    b = fit(pairs, cfg, make_identity_lut4d(5, 2))
    assert a.trace == b.trace
    assert np.array_equal(a.lut.table, b.lut.table)


def test_fit_alpha_mode(rng):
    bank = BasisLutBank.random(6, 5, 2, scale=0.1, seed=2)
    truth = np.abs(rng.normal(0, 0.5, 6))
    hidden = Lut4D(identity_table(5, 2, np.float64) + np.tensordot(truth, bank.bases.astype(np.float64), 1))
    res = fit(_pairs(rng, hidden, 2, 16, 16), FitConfig(mode="alpha", steps=400, lambda_tv=0, lambda_mn=0,
                                                        learning_rate=0.05), bank)
    assert res.params.shape == (6,)
    assert np.abs(res.params - truth).max() < 1e-2
    assert res.trace[-1][1] < res.trace[0][1]


def test_fit_nan_aborts(rng):
    pairs = _pairs(rng, make_identity_lut4d(3, 2), 1, 4, 4)
    with pytest.raises(NumericError):
        fit(pairs, FitConfig(learning_rate=1e200, steps=5), make_identity_lut4d(3, 2))


def test_fit_init_type_checks(rng):
    pairs = _pairs(rng, make_identity_lut4d(3, 2), 1, 4, 4)
    with pytest.raises(DataError):
        fit(pairs, FitConfig(), BasisLutBank.random(2, 3, 2))
    with pytest.raises(DataError):
        fit(pairs, FitConfig(mode="alpha"), make_identity_lut4d(3, 2))


def test_trace_csv(tmp_path, rng):
    res = fit(_pairs(rng, make_identity_lut4d(3, 2), 1, 4, 4), FitConfig(steps=3), make_identity_lut4d(3, 2))
    path = tmp_path / "t.csv"
    res.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,L_rec,L_TV,L_MN,total" and len(lines) == 4


def test_loss_terms_total(rng):
    t = rng.uniform(0, 1, (3, 2, 3, 3, 3))
    batch = make_batch(_pairs(rng, make_identity_lut4d(3, 2), 1, 4, 4), 3, 2)
    cfg = FitConfig(lambda_rec=2.0, lambda_tv=0.5, lambda_mn=3.0)
    terms = loss_terms(t, batch, cfg)
    assert terms["total"] == pytest.approx(2 * terms["rec"] + 0.5 * terms["tv"] + 3 * terms["mn"])


def test_config_validation():
    with pytest.raises(DataError):
        FitConfig(mode="other")
    with pytest.raises(DataError):
        FitConfig(lambda_tv=-1)
    with pytest.raises(DataError):
        FitConfig(steps=0)
