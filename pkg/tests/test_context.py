import numpy as np
import pytest

from lut4d.context import (box_blur, encode, generate_context, init_context_params,
                           luminance_context)
from lut4d.errors import MissingParameterError
from lut4d.nn import WeightArchive
from oracles import (attention_dense, box_blur_loop, conv_loop, instance_norm_loop, relu_np,
                     residual_oracle)

SMALL = dict(encoder_channels=(4, 6), residual_blocks=1, attention_dim=5)


@pytest.fixture
def params():
    return init_context_params(**SMALL, seed=7)


@pytest.mark.parametrize("h,w", [(17, 23), (5, 9), (30, 31), (1, 7), (4, 4)])
def test_output_contract(rng, params, h, w):
    gamma = generate_context(rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (12, 10, 3)), params)
    assert gamma.shape == (h, w)
    assert gamma.min() >= 0.0 and gamma.max() <= 1.0


def test_zero_head_gives_half(rng, params):
    params["head.weight"][:] = 0
    gamma = generate_context(rng.uniform(0, 1, (13, 11, 3)), rng.uniform(0, 1, (8, 8, 3)), params)
    assert np.abs(gamma - 0.5).max() <= 1e-6


def test_style_swap_changes_map(rng, params):
    content = rng.uniform(0, 1, (16, 16, 3))
    a = generate_context(content, np.full((16, 16, 3), 0.1) + rng.uniform(0, 0.2, (16, 16, 3)), params)
    b = generate_context(content, rng.uniform(0, 1, (16, 16, 3)) ** 3, params)
    assert np.abs(a - b).max() > 0


def test_attention_rows_sum_to_one(rng, params):
    _, attn = generate_context(rng.uniform(0, 1, (16, 16, 3)), rng.uniform(0, 1, (16, 16, 3)), params,
                               return_attention=True)
    assert attn.shape == (16, 16)
    assert np.abs(attn.sum(axis=1) - 1).max() <= 1e-6


def _encode_oracle(x, p, prefix):
    i = 0
    while f"{prefix}.conv{i}.weight" in p:
        x = conv_loop(x, p[f"{prefix}.conv{i}.weight"], p[f"{prefix}.conv{i}.bias"], 2, 1)
        x = relu_np(instance_norm_loop(x, p[f"{prefix}.norm{i}.weight"], p[f"{prefix}.norm{i}.bias"]))
        i += 1
    j = 0
    while f"{prefix}.res{j}.conv1.weight" in p:
        x = residual_oracle(x, p.scope(f"{prefix}.res{j}"))
        j += 1
    return x


def _bilinear_up(x, f):
    c, h, w = x.shape

    def axis(n):
        s = np.clip((np.arange(n * f) + 0.5) / f - 0.5, 0, n - 1)
        i0 = np.floor(s).astype(int)
        return i0, np.minimum(i0 + 1, n - 1), s - i0

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    out = np.empty((c, h * f, w * f))
    for yy in range(h * f):
        for xx in range(w * f):
            a = (1 - fx[xx]) * x[:, y0[yy], x0[xx]] + fx[xx] * x[:, y0[yy], x1[xx]]
            b = (1 - fx[xx]) * x[:, y1[yy], x0[xx]] + fx[xx] * x[:, y1[yy], x1[xx]]
            out[:, yy, xx] = (1 - fy[yy]) * a + fy[yy] * b
    return out


def test_matches_composed_oracle(rng, params):
    content = rng.uniform(0, 1, (16, 16, 3))
    style = rng.uniform(0, 1, (16, 16, 3))
    p = WeightArchive({k: v.astype(np.float64) for k, v in params.items()})
    cf = _encode_oracle(content.transpose(2, 0, 1), p, "content_enc")
    sf = _encode_oracle(style.transpose(2, 0, 1), p, "style_enc")
    att, _ = attention_dense(cf, sf, *(p[f"attn.{n}.{t}"] for n in "qkv" for t in ("weight", "bias")))
    x = relu_np(conv_loop(np.concatenate([att, cf]), p["fuse.weight"], p["fuse.bias"], 1, 1))
    x = conv_loop(_bilinear_up(x, 4), p["head.weight"], p["head.bias"], 1, 0)
    ref = 1 / (1 + np.exp(-x[0]))
    assert np.abs(generate_context(content, style, params) - ref).max() <= 1e-5


def test_large_style_is_downscaled(rng, params):
    content = rng.uniform(0, 1, (8, 8, 3))
    big = rng.uniform(0, 1, (90, 60, 3))
    _, attn = generate_context(content, big, params, style_max_side=32, return_attention=True)
    # 32x21 style -> two stride-2 stages -> 8x6 positions
    assert attn.shape[1] == 8 * 6


def test_missing_parameters(rng, params):
    del params["attn.v.weight"]
    with pytest.raises(MissingParameterError):
        generate_context(rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)), params)
    with pytest.raises(MissingParameterError):
        encode(np.zeros((3, 4, 4)), WeightArchive())


def test_degenerate_constant_inputs(params):
    gamma = generate_context(np.full((9, 9, 3), 0.5), np.full((8, 8, 3), 0.5), params)
    assert np.all(np.isfinite(gamma)) and gamma.min() >= 0 and gamma.max() <= 1


def test_deterministic(rng, params):
    c, s = rng.uniform(0, 1, (12, 12, 3)), rng.uniform(0, 1, (12, 12, 3))
    assert np.array_equal(generate_context(c, s, params), generate_context(c, s, params))


def test_luminance_cases(rng):
    assert np.all(luminance_context(np.ones((5, 6, 3)), 2) == 1.0)
    assert np.all(luminance_context(np.full((4, 4, 3), 0.5), 0) == 0.5)
    img = rng.uniform(0, 1, (8, 8, 3))
    luma = img @ np.array([0.2126, 0.7152, 0.0722])
    assert np.abs(luminance_context(img, 1) - box_blur_loop(luma, 1)).max() <= 1e-6


def test_box_blur_matches_loop(rng):
    a = rng.uniform(0, 1, (7, 11))
    for r in (0, 1, 2, 5, 20):
        assert np.abs(box_blur(a, r) - box_blur_loop(a, r)).max() <= 1e-12
