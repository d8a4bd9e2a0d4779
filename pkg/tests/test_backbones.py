import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from spikefuse import backbones as bb
from spikefuse.errors import ConfigError, ShapeError
from spikefuse.events import AggregatedSlice
from spikefuse.numerics import ParameterStore, Tensor, ops

from oracles import autodiff_chain, scalar_lif_oracle, symbolic_chain


def one_layer_config(out_channels=2, kernel=3, padding=1, alpha=0.7):
    return bb.SnnBackboneConfig(1, [bb.ConvSpec(out_channels, kernel, 1, padding)], [], alpha, 1.0)


# -- config notation -----------------------------------------------------------

def test_parse_conv_specs():
    specs = bb.parse_conv_specs("C64k11s4p5-BN-C128k5s2p2")
    assert specs == [bb.ConvSpec(64, 11, 4, 5, True), bb.ConvSpec(128, 5, 2, 2)]
    assert bb.format_conv_specs(specs) == "C64k11s4p5-BN-C128k5s2p2"


@pytest.mark.parametrize("text", ["C64k11s4", "BN-C1k1s1p0", "X1k1s1p0", "C0k1s1p0"])
def test_parse_conv_specs_rejects(text):
    with pytest.raises(ConfigError):
        bb.parse_conv_specs(text)


def test_default_configs_reach_strides():
    bb.AnnBackboneConfig().validate()
    bb.SnnBackboneConfig().validate()
    with pytest.raises(ConfigError):
        bb.SnnBackboneConfig(low=bb.parse_conv_specs("C8k3s2p1")).validate()
    with pytest.raises(ConfigError):
        bb.SnnBackboneConfig(alpha=1.0).validate()


def test_default_ann_has_six_convs_with_128_and_256_channels():
    cfg = bb.AnnBackboneConfig()
    assert len(cfg.low) + len(cfg.high) == 6
    assert cfg.low[-1].out_channels == 128 and cfg.high[-1].out_channels == 256


# -- ANN -------------------------------------------------------------------

def small_ann():
    return bb.AnnBackboneConfig(3, bb.parse_conv_specs("C4k3s2p1-C4k3s2p1-C8k3s2p1"),
                                bb.parse_conv_specs("C8k3s2p1"))


def test_ann_shapes_64():
    cfg = small_ann()
    store = ParameterStore(0)
    bb.init_ann_params(store, cfg)
    f_l, f_h = bb.ann_forward(Tensor(np.random.default_rng(0).random((3, 64, 64))), cfg, store)
    assert f_l.shape == (8, 8, 8) and f_h.shape == (8, 4, 4)


def test_ann_zero_input_zero_bias_gives_zero():
    cfg = small_ann()
    store = ParameterStore(0)
    bb.init_ann_params(store, cfg)
    for name, t in store.items():
        if name.endswith("bias"):
            t.data[...] = 0.0
    f_l, f_h = bb.ann_forward(Tensor(np.zeros((3, 32, 32))), cfg, store)
    assert not f_l.data.any() and not f_h.data.any()


def test_ann_high_from_stored_low():
    cfg = small_ann()
    store = ParameterStore(1)
    bb.init_ann_params(store, cfg)
    f_l, f_h = bb.ann_forward(np.random.default_rng(1).random((3, 32, 32)), cfg, store)
    assert np.array_equal(bb.ann_high(Tensor(f_l.data.copy()), cfg, store).data, f_h.data)


def test_ann_rejects_indivisible_input():
    cfg = small_ann()
    store = ParameterStore(0)
    bb.init_ann_params(store, cfg)
    with pytest.raises(ShapeError):
        bb.ann_forward(np.zeros((3, 40, 40)), cfg, store)


def test_ann_and_snn_high_maps_align():
    ann, snn = bb.AnnBackboneConfig(), bb.SnnBackboneConfig()
    for size in (64, 96, 128):
        assert bb.feature_size(ann, size) == bb.feature_size(snn, size) == (size // 8, size // 16)


def test_channel_norm_normalizes_each_channel():
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, (4, 5, 5)))
    y = bb.channel_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.allclose(y.mean(axis=(1, 2)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(1, 2)), 1, atol=1e-4)


# -- LIF -------------------------------------------------------------------

def test_lif_step_examples():
    s = bb.LIFLayerState.zeros((1,))
    s, o = bb.lif_step(s, Tensor([1.5]), 0.7, 1.0)
    assert s.u.data[0] == 1.5 and o.data[0] == 1.0
    s, o = bb.lif_step(s, Tensor([0.0]), 0.7, 1.0)
    assert s.u.data[0] == 0.0 and o.data[0] == 0.0
    s = bb.LIFLayerState(Tensor([0.5]), Tensor([0.0]))
    s, o = bb.lif_step(s, Tensor([0.0]), 0.7, 1.0)
    assert s.u.data[0] == 0.7 * 0.5 and o.data[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_lif_reset_gates_carried_term(u_prev, inp):
    s = bb.LIFLayerState(Tensor(u_prev), Tensor(np.ones(4)))
    s, _ = bb.lif_step(s, Tensor(inp), 0.7, 1.0)
    assert np.array_equal(s.u.data, np.asarray(inp, dtype=np.float64))


def test_lif_threshold_equality_fires():
    _, o = bb.lif_step(bb.LIFLayerState.zeros((1,)), Tensor([1.0]), 0.7, 1.0)
    assert o.data[0] == 1.0


def _slice(values):
    return AggregatedSlice(np.asarray(values, dtype=np.uint8), 0, 1)


def test_snn_one_layer_matches_scalar_simulation_bit_exact():
    rng = np.random.default_rng(5)
    cfg = one_layer_config()
    store = ParameterStore(0)
    bb.init_snn_params(store, cfg)
    # dyadic weights keep every convolution sum exact in any order
    store["snn.low.0.weight"].data[...] = rng.integers(-8, 9, size=(2, 1, 3, 3)) / 8.0
    store["snn.low.0.bias"].data[...] = rng.integers(-4, 5, size=2) / 8.0
    slices = [rng.choice([0, 127, 254], size=(4, 4)) for _ in range(5)]
    low, high, membranes = bb.snn_forward([_slice(s) for s in slices], cfg, store, return_membranes=True)
    assert high == []
    oracle = scalar_lif_oracle(slices, store["snn.low.0.weight"].data, store["snn.low.0.bias"].data, 0.7, 1.0)
    fired_after_spike = False
    for n, ((spk, u), got, mem) in enumerate(zip(oracle, low, membranes)):
        assert np.array_equal(got.data, spk)
        assert np.array_equal(mem[0].data, u)
        if n:
            fired_after_spike |= bool((oracle[n - 1][0] * 1).any())
    assert fired_after_spike, "fixture should exercise the spike-gated reset"


def test_snn_single_step_equals_one_lif_pass():
    cfg = one_layer_config()
    store = ParameterStore(3)
    bb.init_snn_params(store, cfg)
    sl = _slice(np.random.default_rng(0).choice([0, 127, 254], size=(4, 4)))
    [train], _ = bb.snn_forward([sl], cfg, store)
    current = ops.conv2d(Tensor(sl.normalized()[None]), store["snn.low.0.weight"], store["snn.low.0.bias"], 1, 1)
    _, o = bb.lif_step(bb.LIFLayerState.zeros(current.shape), current, 0.7, 1.0)
    assert np.array_equal(train.data, o.data)


def test_snn_no_event_slices_are_half_and_deterministic():
    sl = _slice(np.full((16, 16), 127))
    assert np.all(sl.normalized() == 0.5)
    cfg = bb.SnnBackboneConfig(1, bb.parse_conv_specs("C4k3s2p1-C4k3s2p1-C4k3s2p1"),
                               bb.parse_conv_specs("C4k3s2p1"))
    a, b = ParameterStore(9), ParameterStore(9)
    bb.init_snn_params(a, cfg)
    bb.init_snn_params(b, cfg)
    ra = bb.snn_forward([sl] * 3, cfg, a)
    rb = bb.snn_forward([sl] * 3, cfg, b)
    for x, y in zip(ra[0] + ra[1], rb[0] + rb[1]):
        assert np.array_equal(x.data, y.data)
        assert set(np.unique(x.data)) <= {0.0, 1.0}


def test_snn_rejects_empty_sequence():
    with pytest.raises(ConfigError):
        bb.snn_forward([], one_layer_config(), ParameterStore(0))


def test_snn_state_resets_between_intervals():
    cfg = one_layer_config()
    store = ParameterStore(2)
    bb.init_snn_params(store, cfg)
    rng = np.random.default_rng(1)
    first = [_slice(rng.choice([0, 127, 254], size=(4, 4))) for _ in range(3)]
    later = [_slice(rng.choice([0, 127, 254], size=(4, 4))) for _ in range(3)]
    bb.snn_forward(first, cfg, store)
    fresh = bb.snn_forward(later, cfg, store)[0]
    again = bb.snn_forward(later, cfg, store)[0]
    assert all(np.array_equal(a.data, b.data) for a, b in zip(fresh, again))


# -- surrogate gradient --------------------------------------------------------

def test_surrogate_on_1000_grid_points():
    x = np.linspace(-3, 3, 1000)
    assert np.array_equal(ops.surrogate_grad(x), np.maximum(0.0, 1.0 - np.abs(x)))


@pytest.mark.parametrize("alpha", [sp.Rational(1, 2), sp.Rational(3, 4)])
def test_lif_gradient_matches_symbolic_expansion_exactly(alpha):
    # dyadic values: every intermediate float is exact, so equality is bit-exact
    xs = [sp.Rational(3, 4), sp.Rational(1, 2), sp.Rational(1, 4)]
    w0, b0, th0 = sp.Rational(5, 4), sp.Rational(1, 8), sp.Rational(1, 1)
    loss, syms, coeffs = symbolic_chain(xs, alpha)
    vals = dict(zip(syms, (w0, b0, th0)))
    want = [sp.diff(loss, s).subs(vals) for s in syms]
    got = autodiff_chain([float(x) for x in xs], float(w0), float(b0), float(th0), float(alpha), coeffs)
    assert [float(v) for v in want] == got
    assert any(v != 0 for v in got)


def test_lif_gradient_symbolic_default_alpha():
    xs = [sp.Rational(7, 10), sp.Rational(2, 5), sp.Rational(9, 10)]
    w0, b0, th0 = sp.Rational(6, 5), sp.Rational(1, 10), sp.Rational(1, 1)
    loss, syms, coeffs = symbolic_chain(xs, sp.Rational(7, 10))
    vals = dict(zip(syms, (w0, b0, th0)))
    want = [float(sp.diff(loss, s).subs(vals)) for s in syms]
    got = autodiff_chain([float(x) for x in xs], float(w0), float(b0), float(th0), 0.7, coeffs)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert any(v != 0 for v in got)


def test_threshold_gradient_is_negative_surrogate():
    th = Tensor([1.0], requires_grad=True)
    u = Tensor([0.75, 1.5, 3.0])
    o = ops.spike(ops.sub(u, th))
    ops.sum(o).backward()
    assert th.grad[0] == -(0.75 + 0.5 + 0.0)


# -- rate code and thresholds --------------------------------------------------

def test_rate_code_examples():
    train = [Tensor([1.0]), Tensor([0.0]), Tensor([1.0]), Tensor([0.0])]
    assert bb.rate_code(train).data[0] == 0.5
    assert bb.rate_code([Tensor([0.0])] * 3).data[0] == 0.0
    assert bb.rate_code([Tensor([1.0])] * 3).data[0] == 1.0
    with pytest.raises(ConfigError):
        bb.rate_code([])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_rate_code_on_grid(n, seed):
    rng = np.random.default_rng(seed)
    train = [Tensor(rng.integers(0, 2, size=(2, 3)).astype(float)) for _ in range(n)]
    r = bb.rate_code(train).data
    assert np.allclose(r * n, np.round(r * n), atol=1e-12)
    assert r.min() >= 0 and r.max() <= 1


def test_thresholds_are_per_layer_and_clamped():
    cfg = bb.SnnBackboneConfig()
    store = ParameterStore(0)
    bb.init_snn_params(store, cfg)
    names = [n for n in store.names() if n.endswith("u_th")]
    assert len(names) == 3 and all(store[n].shape == (1,) and store[n].data[0] == 1.0 for n in names)
    store[names[0]].data[0] = -2.0
    bb.clamp_thresholds(store)
    assert store[names[0]].data[0] == bb.U_TH_MIN
