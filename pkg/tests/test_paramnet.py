from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knobdenoise.errors import InvariantError, MediaIOError, ShapeError
from knobdenoise.flow import AlignedSet, FlowField, align_neighbors
from knobdenoise.media import Frame
from knobdenoise.paramnet import (HEADS, THETA0_PATH, Knobs, NetWeights, ParamMaps, apply_knobs,
                                  assemble_net_input, build_default_theta0, conv2d_s2, default_theta0,
                                  inverse_softplus, predict_param_maps, prelu, run_trunk, sobel_gradients,
                                  softplus, weight_shapes)
from knobdenoise.pyramid import resample

from conftest import constant_clip, static_clip, texture


def static_aligned(frame):
    ones = np.ones(frame.shape)
    z = FlowField.zeros(frame.shape)
    return AlignedSet(frame, (frame,) * 4, (ones,) * 4, (z,) * 4, (False,) * 4)


def head_bias_theta(values: dict) -> NetWeights:
    """Random trunk, zero head kernels, head biases = inverse_softplus(values)."""
    t = NetWeights.random(3)
    upd = {}
    for name, ch in HEADS.items():
        upd[f"{name}.weight"] = np.zeros((ch, 32, 1, 1))
        upd[f"{name}.bias"] = np.full(ch, inverse_softplus(values[name]))
    return NetWeights(OrderedDict((k, upd.get(k, v)) for k, v in t.items()))


# ---------------------------------------------------------------- elementwise


def test_sobel_examples():
    gx, gy = sobel_gradients(np.full((10, 10), 0.3))
    assert np.all(gx == 0) and np.all(gy == 0)
    W = 20
    ramp = np.tile(np.arange(W) / W, (12, 1))
    gx, gy = sobel_gradients(ramp)
    np.testing.assert_allclose(gx[1:-1, 1:-1], 8 / W, atol=1e-12)
    np.testing.assert_allclose(gy, 0, atol=1e-12)
    step = np.zeros((10, 10))
    step[:, 5:] = 1.0
    gx, gy = sobel_gradients(step)
    assert set(np.argmax(np.abs(gx), axis=1)) <= {4, 5}
    assert np.all(gy == 0)


def test_prelu_softplus_examples():
    assert prelu(5, 0.25) == 5
    assert prelu(-2, 0.25) == -0.5
    assert prelu(0, 3.0) == 0
    assert softplus(0) == pytest.approx(0.693147, abs=1e-6)
    assert softplus(100) == pytest.approx(100)
    s = softplus(-100)
    assert 0 <= s and s == pytest.approx(3.7e-44, rel=0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-5, 50))
def test_inverse_softplus_identity(y):
    assert softplus(inverse_softplus(y)) == pytest.approx(y, rel=1e-9)


def test_inverse_softplus_guard():
    assert np.isfinite(inverse_softplus(0.0))
    assert softplus(inverse_softplus(0.0)) == pytest.approx(1e-6, rel=1e-6)


# ---------------------------------------------------------------- conv


def naive_conv_s2(x, w, b):
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((cout, (h + 1) // 2, (wd + 1) // 2))
    for o in range(cout):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[o, i, j] = b[o] + np.sum(w[o] * xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3])
    return out


def test_conv_identity_kernel(rng):
    x = rng.random((1, 9, 8))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(conv2d_s2(x, w, np.zeros(1))[0], x[0, ::2, ::2])


def test_conv_ones():
    out = conv2d_s2(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1))[0]
    assert out[0, 0] == 4
    assert out[1, 1] == 9


def test_conv_bias_only(rng):
    out = conv2d_s2(rng.random((3, 7, 7)), np.zeros((2, 3, 3, 3)), np.array([0.5, -1.0]))
    assert np.all(out[0] == 0.5) and np.all(out[1] == -1.0)


def test_conv_matches_naive(rng):
    x = rng.normal(size=(3, 11, 10))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(conv2d_s2(x, w, b), naive_conv_s2(x, w, b), atol=1e-12)
    with pytest.raises(ShapeError):
        conv2d_s2(x[:2], w, b)


# ---------------------------------------------------------------- inputs and prediction


def test_net_input_layout():
    clip = static_clip(5, 48, 48)
    x = assemble_net_input(align_neighbors(clip, 2))
    assert x.shape == (25, 48, 48)
    for k in range(1, 5):
        np.testing.assert_allclose(x[k], x[0], atol=1e-3)
    np.testing.assert_allclose(x[20:], 1.0, atol=0.02)
    gray = assemble_net_input(align_neighbors(constant_clip(3, 40, 40), 1))
    assert np.all(gray[10:20] == 0)
    edge = assemble_net_input(align_neighbors(clip, 0))
    assert np.all(edge[21] == 1) and np.all(edge[22] == 1)


def test_zero_net_gives_ln2():
    maps = predict_param_maps(static_aligned(Frame(*(texture(40, 48, s) for s in range(3)))), NetWeights.zeros())
    for p in maps.all_planes():
        np.testing.assert_allclose(p, np.log(2.0), atol=1e-12)


def test_head_biases_set_constants():
    vals = {n: 0.0123 * (i + 1) for i, n in enumerate(HEADS)}
    f = Frame(*(texture(64, 40, s) for s in range(3)))
    maps = predict_param_maps(static_aligned(f), head_bias_theta(vals))
    np.testing.assert_allclose(maps.sigma2_luma, vals["head_sigma2_luma"], rtol=1e-5)
    np.testing.assert_allclose(maps.sigma2_chroma, vals["head_sigma2_chroma"], rtol=1e-5)
    for lvl in maps.sigmar_chroma:
        np.testing.assert_allclose(lvl, vals["head_sigmar_chroma"], rtol=1e-5)
    assert maps.sigma2_luma.shape == (8, 5)
    assert [p.shape for p in maps.sigmad_luma] == [(64, 40), (32, 20), (16, 10)]


def test_maps_non_negative_random():
    rng = np.random.default_rng(0)
    for i in range(100):
        f = Frame(*(rng.random((32, 32)) for _ in range(3)))
        theta = NetWeights.random(i, scale=5.0)
        assert min(p.min() for p in predict_param_maps(static_aligned(f), theta).all_planes()) >= 0


def test_translation_consistency():
    rng = np.random.default_rng(5)
    big = [texture(96, 96, s) for s in range(3)]
    theta = NetWeights.random(11)
    a = predict_param_maps(static_aligned(Frame(*big)), theta)
    b = predict_param_maps(static_aligned(Frame(*(np.roll(p, (8, 8), axis=(0, 1)) for p in big))), theta)
    np.testing.assert_allclose(b.sigma2_luma[3:-2, 3:-2], a.sigma2_luma[2:-3, 2:-3], atol=1e-5)


def test_upsampling_grid():
    theta = NetWeights.random(2)
    f = Frame(*(texture(64, 64, s) for s in range(3)))
    al = static_aligned(f)
    maps = predict_param_maps(al, theta)
    from knobdenoise.paramnet import conv1x1, run_trunk, assemble_net_input as ani
    feats = run_trunk(ani(al), theta)
    raw = softplus(conv1x1(feats, theta["head_sigmad_luma.weight"], theta["head_sigmad_luma.bias"]))
    # level-k pixel i reads coarse cell i * 2^k / 8
    np.testing.assert_allclose(maps.sigmad_luma[0][::8, ::8], raw[0], atol=1e-12)
    np.testing.assert_allclose(maps.sigmad_luma[1][::4, ::4], raw[1], atol=1e-12)
    np.testing.assert_allclose(maps.sigmad_luma[2][::2, ::2], raw[2], atol=1e-12)


def test_predict_too_small():
    f = Frame(*(np.zeros((16, 16)),) * 3)
    with pytest.raises(InvariantError):
        predict_param_maps(static_aligned(f), NetWeights.zeros())


# ---------------------------------------------------------------- knobs


def test_knobs_identity_and_reduced_temporal_preset():
    maps = ParamMaps.constant((64, 64), sigma2=0.01, sigmar=0.05)
    same = apply_knobs(maps, Knobs())
    for a, b in zip(maps.all_planes(), same.all_planes()):
        assert np.array_equal(a, b)
    red = apply_knobs(maps, Knobs(0.2, 0.2, 0, 0, 0, 0))
    np.testing.assert_allclose(red.sigma2_luma, 0.002)
    for p in list(red.sigmad_luma) + list(red.sigmar_chroma):
        assert np.all(p == 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 4), st.floats(0, 4))
def test_knobs_linear_and_commute_with_upsampling(a, b):
    base = np.random.default_rng(0).random((8, 8))
    maps = ParamMaps(base, base, (base,) * 3, (base,) * 3, (base,) * 3, (base,) * 3)
    ka = apply_knobs(maps, Knobs.uniform(a, a, a)).sigma2_luma
    kb = apply_knobs(maps, Knobs.uniform(b, b, b)).sigma2_luma
    kab = apply_knobs(maps, Knobs.uniform((a + b) / 2, 0, 0)).sigma2_luma
    np.testing.assert_allclose(kab, 0.5 * (ka + kb), atol=1e-12)
    np.testing.assert_allclose(resample(ka, (64, 64), 1 / 8), a * resample(base, (64, 64), 1 / 8), atol=1e-12)


@pytest.mark.parametrize("bad", [(-0.1,) + (1,) * 5, (4.01,) + (1,) * 5, (np.nan,) * 6])
def test_knob_validation(bad):
    with pytest.raises(InvariantError):
        Knobs.from_sequence(bad)


def test_knob_parse():
    assert Knobs.parse("1,1,0,0,0,0").as_tuple() == (1, 1, 0, 0, 0, 0)
    with pytest.raises(InvariantError, match="malformed"):
        Knobs.parse("1,x,0,0,0,0")
    with pytest.raises(InvariantError, match="6 knob"):
        Knobs.parse("1,1")
    with pytest.raises(InvariantError, match="exceeds"):
        Knobs.parse("9,1,1,1,1,1")


# ---------------------------------------------------------------- weights


def test_weight_roundtrip_bit_exact(tmp_path):
    w = NetWeights.random(7)
    w.save(tmp_path / "w.rfcw")
    back = NetWeights.load(tmp_path / "w.rfcw")
    assert back == w
    assert back.to_bytes() == w.to_bytes()


def test_weight_format_header():
    data = NetWeights.zeros().to_bytes()
    assert data[:5] == b"RFCW1"
    assert int.from_bytes(data[5:9], "little") == len(weight_shapes())


def test_weight_errors(tmp_path):
    with pytest.raises(MediaIOError, match="magic"):
        NetWeights.from_bytes(b"XXXX")
    with pytest.raises(MediaIOError):
        NetWeights.from_bytes(NetWeights.zeros().to_bytes()[:-8])
    t = OrderedDict(NetWeights.zeros().items())
    t["conv2.bias"] = np.zeros(5)
    with pytest.raises(ShapeError, match="conv2.bias"):
        NetWeights(t)


def test_shipped_theta0_matches_generator():
    assert THETA0_PATH.exists()
    assert default_theta0() == build_default_theta0()


def test_weight_arithmetic():
    a, b = NetWeights.random(1), NetWeights.random(2)
    np.testing.assert_allclose(((a + b) - b).flat(), a.flat(), atol=1e-6)
    assert (a + (-a)) == NetWeights.zeros()


def test_trunk_resolution():
    x = np.zeros((25, 64, 48))
    assert run_trunk(x, NetWeights.zeros()).shape == (32, 8, 6)


def test_sobel_matches_scipy_correlate(rng):
    from scipy.ndimage import correlate
    from knobdenoise.paramnet import SOBEL_X, SOBEL_Y
    p = rng.random((13, 17))
    gx, gy = sobel_gradients(p)
    np.testing.assert_allclose(gx, correlate(p, SOBEL_X, mode="mirror"), atol=1e-12)
    np.testing.assert_allclose(gy, correlate(p, SOBEL_Y, mode="mirror"), atol=1e-12)
