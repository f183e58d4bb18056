import numpy as np
import pytest

from lut4d import formats
from lut4d.errors import DataError, DimensionError
from lut4d.lut import BasisLutBank, fuse_luts
from lut4d.nn import WeightArchive
from lut4d.style import (FeatureProvider, extract_features, generate_weights,
                         init_weight_generator, pyramid_descriptor, style_to_lut)
from oracles import conv_loop, softmax_decimal

SMALL = (4, 4, 6, 6)


def test_builtin_pyramid_sizes(rng):
    levels = extract_features(rng.uniform(0, 1, (64, 64, 3)), FeatureProvider.builtin())
    assert [l.shape[1:] for l in levels] == [(32, 32), (16, 16), (8, 8), (4, 4)]
    assert [l.shape[0] for l in levels] == [16, 32, 64, 128]


def test_builtin_deterministic(rng):
    img = rng.uniform(0, 1, (40, 30, 3))
    a = extract_features(img, FeatureProvider.builtin(seed=5))
    b = extract_features(img, FeatureProvider.builtin(seed=5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = extract_features(img, FeatureProvider.builtin(seed=6))
    assert not np.array_equal(a[0], c[0])


def test_file_provider_round_trip(tmp_path, rng):
    levels = extract_features(rng.uniform(0, 1, (48, 48, 3)), FeatureProvider.builtin(channels=SMALL))
    path = tmp_path / "pyr.bin"
    formats.write_weights(path, {f"level{i}": l for i, l in enumerate(levels)})
    back = extract_features(None, FeatureProvider.from_file(path))
    assert all(np.array_equal(x, y) for x, y in zip(levels, back))


def test_file_provider_missing_level(tmp_path):
    path = tmp_path / "pyr.bin"
    formats.write_weights(path, {"level0": np.zeros((1, 4, 4))})
    with pytest.raises(DataError):
        extract_features(None, FeatureProvider.from_file(path))


def test_pyramid_must_shrink():
    bad = [np.zeros((2, 4, 4))] * 4
    with pytest.raises(DimensionError):
        generate_weights(bad, init_weight_generator((2, 2, 2, 2), 3, 4, 8))


def test_zero_final_layer_gives_uniform(rng):
    params = init_weight_generator(SMALL, 10, 8, 16, seed=1)
    params["mlp.1.weight"][:] = 0
    levels = extract_features(rng.uniform(0, 1, (32, 32, 3)), FeatureProvider.builtin(channels=SMALL))
    assert np.allclose(generate_weights(levels, params), 0.1, atol=1e-12)


def test_default_config_64_weights(rng):
    levels = extract_features(rng.uniform(0, 1, (64, 64, 3)), FeatureProvider.builtin())
    alpha = generate_weights(levels, init_weight_generator())
    assert alpha.shape == (64,) and np.all(alpha >= 0)
    assert abs(alpha.sum() - 1) <= 1e-6


def test_generate_weights_matches_composed_oracle(rng):
    channels = (2, 3, 3, 4)
    params = init_weight_generator(channels, 5, 3, 6, seed=2)
    for k in params:
        if k.endswith("bias"):
            params[k] = rng.normal(0, 0.1, params[k].shape).astype(np.float32)
    levels = [rng.normal(size=(c, s, s)).astype(np.float32) for c, s in zip(channels, (8, 6, 4, 2))]
    desc = []
    for d, feat in enumerate(levels):
        red = np.maximum(conv_loop(feat, params[f"reduce{d}.weight"], params[f"reduce{d}.bias"], 1, 1), 0)
        desc += [red[c].max() for c in range(red.shape[0])]
    h = np.maximum(params["mlp.0.weight"].astype(np.float64) @ desc + params["mlp.0.bias"], 0)
    logits = params["mlp.1.weight"].astype(np.float64) @ h + params["mlp.1.bias"]
    assert np.abs(generate_weights(levels, params) - softmax_decimal(logits)).max() <= 1e-5


def test_parameter_shape_mismatch(rng):
    params = init_weight_generator((2, 3, 3, 4), 5, 3, 6)
    levels = [rng.normal(size=(c, s, s)) for c, s in zip((2, 3, 3, 5), (8, 6, 4, 2))]
    with pytest.raises(DimensionError):
        generate_weights(levels, params)


def test_pool_max_saturation(rng):
    channels = (2, 2, 2, 2)
    params = init_weight_generator(channels, 4, 3, 5, seed=3)
    levels = [np.abs(rng.normal(size=(2, s, s))).astype(np.float32) for s in (8, 6, 4, 2)]
    base = pyramid_descriptor(levels, params)
    # zero a 3x3 corner block of level 0; only positions whose reduced value
    # is not the channel max may be affected
    from lut4d.nn import conv_layer, relu

    red = relu(conv_layer(levels[0], params, "reduce0", padding=1))
    argmax = {np.unravel_index(np.argmax(red[c]), red[c].shape) for c in range(red.shape[0])}
    for y in range(1, 7):
        for x in range(1, 7):
            if all(abs(y - ay) > 2 or abs(x - ax) > 2 for ay, ax in argmax):
                lv = [l.copy() for l in levels]
                lv[0][:, y, x] = 0.0
                assert np.array_equal(pyramid_descriptor(lv, params), base)
                alpha = generate_weights(lv, params)
                assert np.array_equal(alpha, generate_weights(levels, params))
                return
    pytest.skip("no pixel far enough from every argmax")


def test_permutation_equivariance(rng):
    params = init_weight_generator(SMALL, 6, 4, 8, seed=4)
    levels = extract_features(rng.uniform(0, 1, (32, 32, 3)), FeatureProvider.builtin(channels=SMALL))
    perm = rng.permutation(6)
    permuted = WeightArchive(params)
    permuted["mlp.1.weight"] = params["mlp.1.weight"][perm]
    permuted["mlp.1.bias"] = params["mlp.1.bias"][perm]
    assert np.allclose(generate_weights(levels, permuted), generate_weights(levels, params)[perm], atol=1e-15)


def test_style_to_lut_composition(rng):
    provider = FeatureProvider.builtin(channels=SMALL)
    params = init_weight_generator(SMALL, 4, 4, 8)
    bank = BasisLutBank.random(4, 5, 2, seed=1)
    style = rng.uniform(0, 1, (32, 32, 3))
    lut = style_to_lut(style, provider, params, bank)
    manual = fuse_luts(bank, generate_weights(extract_features(style, provider), params), clamp=True)
    assert np.array_equal(lut.table, manual.table)
    assert np.array_equal(lut.table, style_to_lut(style, provider, params, bank).table)
    assert lut.table.min() >= 0 and lut.table.max() <= 1


def test_style_to_lut_identity_when_residuals_cancel(rng):
    provider = FeatureProvider.builtin(channels=SMALL)
    params = init_weight_generator(SMALL, 2, 4, 8)
    params["mlp.1.weight"][:] = 0
    b = rng.normal(0, 0.1, (3, 2, 5, 5, 5)).astype(np.float32)
    bank = BasisLutBank(np.stack([b, -b]))
    lut = style_to_lut(rng.uniform(0, 1, (16, 16, 3)), provider, params, bank)
    assert np.array_equal(lut.table, bank.identity.table)


def test_provider_validation():
    with pytest.raises(DataError):
        FeatureProvider("vgg")
    with pytest.raises(DataError):
        FeatureProvider("file")
