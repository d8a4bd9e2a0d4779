import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikefuse import fusion as fu
from spikefuse.errors import ConfigError, ShapeError
from spikefuse.numerics import ParameterStore, Tensor, grad_check, ops


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ln(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=-1, keepdims=True) + eps)


def zero_residual_projections(store):
    for name, t in store.items():
        if name.endswith(("o.weight", "o.bias", "fc2.weight", "fc2.bias")):
            t.data[...] = 0.0


# -- patches and embedding ---------------------------------------------------------

def test_patch_extraction_matches_index_oracle():
    c, h, w, p = 3, 8, 12, 4
    ramp = np.arange(c * h * w, dtype=np.float64).reshape(c, h, w)
    got = fu.extract_patches(Tensor(ramp), p).data
    nw = w // p
    for n in range(got.shape[0]):
        pi, pj = divmod(n, nw)
        for k in range(got.shape[1]):
            # flattened (row-in-patch, col-in-patch, channel)
            r, rem = divmod(k, p * c)
            col, ch = divmod(rem, c)
            assert got[n, k] == ramp[ch, pi * p + r, pj * p + col]


def test_patch_extraction_p1_is_pixels_by_channels():
    x = np.random.default_rng(0).normal(size=(5, 3, 4))
    got = fu.extract_patches(Tensor(x), 1).data
    assert got.shape == (12, 5)
    assert np.array_equal(got, x.reshape(5, 12).T)


def test_patch_extraction_rejects_indivisible():
    with pytest.raises(ShapeError):
        fu.extract_patches(Tensor(np.zeros((1, 6, 8))), 4)


def test_embed_full_size_shape():
    cfg = fu.FusionConfig()
    store = ParameterStore(0)
    fu.init_embed_params(store, cfg.p ** 2 * 256, cfg.d_dim)
    emb = fu.embed_patches(np.random.default_rng(0).normal(size=(256, 16, 16)), cfg, store, source="frame")
    assert emb.rows.shape == (16, 512) and emb.n == 16 and emb.source == "frame"


def test_embed_order_ln_linear_ln():
    cfg = fu.FusionConfig(p=2, d_dim=6, heads=2, dropout_rate=0.0)
    store = ParameterStore(4)
    fu.init_embed_params(store, 4 * 3, 6)
    for n, t in store.items():
        if "gain" in n or "offset" in n:
            t.data[...] = np.random.default_rng(len(n)).normal(size=t.shape)
    x = np.random.default_rng(1).normal(size=(3, 4, 4))
    flat = fu.extract_patches(Tensor(x), 2).data
    a = ln(flat) * store["ln_in.gain"].data + store["ln_in.offset"].data
    a = a @ store["proj.weight"].data + store["proj.bias"].data
    a = ln(a) * store["ln_out.gain"].data + store["ln_out.offset"].data
    np.testing.assert_allclose(fu.embed_patches(x, cfg, store).rows.data, a, atol=1e-12)


def test_dropout_active_only_in_training():
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2, dropout_rate=0.5)
    store = ParameterStore(0)
    fu.init_embed_params(store, 2, 4)
    x = np.random.default_rng(0).normal(size=(2, 4, 4))
    ev1 = fu.embed_patches(x, cfg, store).rows.data
    ev2 = fu.embed_patches(x, cfg, store, fu.Context(False)).rows.data
    tr = fu.embed_patches(x, cfg, store, fu.Context(True, np.random.default_rng(0))).rows.data
    assert np.array_equal(ev1, ev2)
    assert (tr == 0).any() and not np.array_equal(tr, ev1)


# -- attention -----------------------------------------------------------------

def test_cross_attention_identical_rows_return_that_row():
    rng = np.random.default_rng(0)
    d = rng.normal(size=5)
    out = fu.cross_attention(Tensor(rng.normal(size=(3, 5)) * 10), Tensor(np.tile(d, (6, 1)))).data
    np.testing.assert_allclose(out, np.tile(d, (3, 1)), atol=1e-12)


def test_cross_attention_hand_case():
    x = np.array([[1.0, 0.0], [0.5, -1.0]])
    d = np.array([[1.0, 2.0], [0.0, 1.0], [-1.0, 0.5], [2.0, -1.0]])
    out = fu.cross_attention(Tensor(x), Tensor(d)).data
    want = np.zeros((2, 2))
    for n in range(2):
        logits = [(x[n, 0] * d[m, 0] + x[n, 1] * d[m, 1]) / math.sqrt(2.0) for m in range(4)]
        weights = [math.exp(v) for v in logits]
        total = sum(weights)
        for m in range(4):
            want[n] += weights[m] / total * d[m]
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-9)


def test_cross_attention_saturates_to_best_row():
    rng = np.random.default_rng(3)
    x, d = rng.normal(size=(2, 4)), rng.normal(size=(4, 4))
    out = fu.cross_attention(Tensor(x * 1e4), Tensor(d)).data
    best = np.argmax(x @ d.T, axis=1)
    np.testing.assert_allclose(out, d[best], atol=1e-6)


def test_cross_attention_row_count_error():
    with pytest.raises(ShapeError):
        fu.cross_attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 4))))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_cross_attention_convex_hull(n, dim, seed):
    rng = np.random.default_rng(seed)
    x, d = rng.uniform(-3, 3, (n, dim)), rng.uniform(-3, 3, (2 * n, dim))
    out = fu.cross_attention(Tensor(x), Tensor(d)).data
    weights = softmax(x @ d.T / math.sqrt(dim))
    assert np.all(weights >= 0) and np.allclose(weights.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_allclose(out, weights @ d, atol=1e-9)


def _self_block(d_dim=6, heads=1, seed=0):
    store = ParameterStore(seed)
    fu.init_block_params(store, d_dim, 2, True)
    return store


def test_self_attention_block_brute_force():
    store = _self_block(6, 1, 2)
    for n, t in store.items():
        if "gain" in n or "offset" in n:
            t.data[...] = np.random.default_rng(len(n)).normal(size=t.shape)
    x = np.random.default_rng(0).normal(size=(3, 6)) * 0.5
    P = {n: t.data for n, t in store.items()}
    y = ln(x) * P["ln.gain"] + P["ln.offset"]
    q, k, v = (y @ P[f"{s}.weight"] + P[f"{s}.bias"] for s in "qkv")
    att = softmax(q @ k.T / math.sqrt(6)) @ v
    xt = att @ P["o.weight"] + P["o.bias"] + x
    hid = np.maximum(xt @ P["fc1.weight"] + P["fc1.bias"], 0)
    want = hid @ P["fc2.weight"] + P["fc2.bias"] + xt
    np.testing.assert_allclose(fu.self_attn_block(Tensor(x), store, 1).rows.data, want, atol=1e-9)


def test_self_attention_two_heads_split_columns():
    store = _self_block(4, 2, 3)
    x = np.random.default_rng(1).normal(size=(3, 4))
    P = {n: t.data for n, t in store.items()}
    y = ln(x)
    q, k, v = (y @ P[f"{s}.weight"] + P[f"{s}.bias"] for s in "qkv")
    heads = [softmax(q[:, a:a + 2] @ k[:, a:a + 2].T / math.sqrt(2)) @ v[:, a:a + 2] for a in (0, 2)]
    want = np.concatenate(heads, axis=1) @ P["o.weight"] + P["o.bias"]
    got = fu.multihead_self_attention(Tensor(y), store, 2).data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_self_block_zero_projections_is_identity():
    store = _self_block(8, 2)
    zero_residual_projections(store)
    x = np.random.default_rng(0).normal(size=(5, 8))
    assert np.array_equal(fu.self_attn_block(Tensor(x), store, 2).rows.data, x)


def test_self_block_single_row_attention_is_one():
    store = _self_block(4, 2, 1)
    x = np.random.default_rng(0).normal(size=(1, 4))
    P = {n: t.data for n, t in store.items()}
    v = ln(x) @ P["v.weight"] + P["v.bias"]
    xt = v @ P["o.weight"] + P["o.bias"] + x
    want = np.maximum(xt @ P["fc1.weight"] + P["fc1.bias"], 0) @ P["fc2.weight"] + P["fc2.bias"] + xt
    np.testing.assert_allclose(fu.self_attn_block(Tensor(x), store, 2).rows.data, want, atol=1e-12)


def test_heads_must_divide_width():
    store = _self_block(6, 1)
    with pytest.raises(ConfigError):
        fu.multihead_self_attention(Tensor(np.zeros((2, 6))), store, 4)
    with pytest.raises(ConfigError):
        fu.FusionConfig(d_dim=10, heads=3).validate()


def test_cross_block_single_head_reduces_to_cross_attention():
    store = ParameterStore(0)
    fu.init_block_params(store, 4, 2, False)
    rng = np.random.default_rng(0)
    x, d = rng.normal(size=(2, 4)), rng.normal(size=(4, 4))
    P = {n: t.data for n, t in store.items()}
    ca = fu.cross_attention(Tensor(ln(x)), Tensor(d)).data
    xt = ca @ P["o.weight"] + P["o.bias"] + x
    want = np.maximum(xt @ P["fc1.weight"] + P["fc1.bias"], 0) @ P["fc2.weight"] + P["fc2.bias"] + xt
    np.testing.assert_allclose(fu.cross_attn_block(Tensor(x), Tensor(d), store, 1).rows.data, want, atol=1e-12)


def test_cross_block_identical_rows_with_zero_mlp():
    store = ParameterStore(0)
    fu.init_block_params(store, 4, 2, False)
    store["fc2.weight"].data[...] = 0.0
    store["fc2.bias"].data[...] = 0.0
    store["o.weight"].data[...] = np.eye(4)
    store["o.bias"].data[...] = 0.0
    rng = np.random.default_rng(1)
    x, drow = rng.normal(size=(3, 4)), rng.normal(size=4)
    out = fu.cross_attn_block(Tensor(x), Tensor(np.tile(drow, (6, 1))), store, 2).rows.data
    np.testing.assert_allclose(out, x + drow, atol=1e-12)


def test_multihead_cross_scale_uses_head_width():
    store = ParameterStore(0)
    fu.init_block_params(store, 4, 1, False)
    store["o.weight"].data[...] = np.eye(4)
    store["o.bias"].data[...] = 0.0
    rng = np.random.default_rng(2)
    y, d = rng.normal(size=(2, 4)), rng.normal(size=(4, 4))
    want = np.concatenate([softmax(y[:, a:a + 2] @ d[:, a:a + 2].T / math.sqrt(2)) @ d[:, a:a + 2]
                           for a in (0, 2)], axis=1)
    np.testing.assert_allclose(fu.multihead_cross_attention(Tensor(y), Tensor(d), store, 2).data, want, atol=1e-12)


# -- TMFF and decoder -----------------------------------------------------------

def test_full_size_shape_chain():
    cfg = fu.FusionConfig(p=4, d_dim=512, heads=2, blocks=2)
    store = ParameterStore(0)
    fu.init_level_params(store, cfg, "tff", 256, 256, (16, 16))
    rng = np.random.default_rng(0)
    f = fu.embed_patches(rng.normal(size=(256, 16, 16)), cfg, store.scoped("embed_frame"))
    g = fu.embed_patches(rng.normal(size=(256, 16, 16)), cfg, store.scoped("embed_event"))
    assert f.rows.shape == g.rows.shape == (16, 512)
    t = fu.tmff_fuse(f, g, cfg, store.scoped("tmff"))
    assert t.rows.shape == (32, 512)
    out = fu.decode_embeddings(t, 16, 16, cfg, store.scoped("decoder"))
    assert out.shape == (512, 16, 16)


def test_decoder_small_target():
    cfg = fu.FusionConfig(d_dim=8, heads=2)
    store = ParameterStore(0)
    fu.init_decoder_params(store, 8, 32, 16)
    assert fu.decode_embeddings(Tensor(np.random.default_rng(0).normal(size=(32, 8))), 4, 4, cfg, store).shape == (8, 4, 4)


def test_decoder_matches_composed_oracle_and_reshape_is_row_major():
    cfg = fu.FusionConfig(d_dim=4, heads=2, dropout_rate=0.0)
    store = ParameterStore(1)
    fu.init_decoder_params(store, 4, 6, 6)
    t = np.random.default_rng(0).normal(size=(6, 4))
    P = {n: v.data for n, v in store.items()}
    a = (ln(t) * P["ln_in.gain"] + P["ln_in.offset"]).T
    a = a @ P["proj.weight"] + P["proj.bias"]
    a = ln(a) * P["ln_out.gain"] + P["ln_out.offset"]
    out = fu.decode_embeddings(Tensor(t), 2, 3, cfg, store).data
    for k in range(6):
        np.testing.assert_allclose(out[:, k // 3, k % 3], a[:, k], atol=1e-12)
    assert np.array_equal(out.reshape(4, 6), out.reshape(4, 2, 3).reshape(4, 6))


def test_transpose_step():
    x = np.random.default_rng(0).normal(size=(3, 5))
    assert np.array_equal(ops.transpose(Tensor(x)).data, x.T)


def test_decoder_resample_start_is_spatially_aligned():
    m = fu.resample_matrix((4, 4), (4, 4))
    assert np.array_equal(m, np.eye(16))
    up = fu.resample_matrix((2, 2), (4, 4))
    assert np.allclose(up.sum(axis=0), 1.0)


def test_tmff_concat_order_and_zero_case():
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2, blocks=2, mlp_ratio=2)
    store = ParameterStore(0)
    fu.init_tmff_params(store, cfg)
    zero_residual_projections(store)
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    t = fu.tmff_fuse(Tensor(f), Tensor(g), cfg, store).rows.data
    assert np.array_equal(t[:3], f) and np.array_equal(t[3:], g)
    z = fu.tmff_fuse(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))), cfg, store).rows.data
    assert z.shape == (6, 4) and not z.any()


def test_tmff_shares_parameters_across_iterations():
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2, blocks=3, mlp_ratio=2)
    store = ParameterStore(0)
    fu.init_tmff_params(store, cfg)
    assert sorted({n.split(".")[0] for n in store.names()}) == ["cat1", "cat2", "sat1", "sat2"]


def test_tmff_modalities_must_match():
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2)
    store = ParameterStore(0)
    fu.init_tmff_params(store, cfg)
    with pytest.raises(ShapeError):
        fu.tmff_fuse(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))), cfg, store)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tmff_is_permutation_covariant(seed):
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2, blocks=2, mlp_ratio=2)
    store = ParameterStore(3)
    fu.init_tmff_params(store, cfg)
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    base = fu.tmff_fuse(Tensor(f), Tensor(g), cfg, store).rows.data
    moved = fu.tmff_fuse(Tensor(f[perm]), Tensor(g[perm]), cfg, store).rows.data
    np.testing.assert_allclose(moved[:5], base[:5][perm], atol=1e-10)
    np.testing.assert_allclose(moved[5:], base[5:][perm], atol=1e-10)


# -- fuse_level -------------------------------------------------------------------

def test_fuse_level_add_and_concat():
    cfg = fu.FusionConfig(p=1, d_dim=6, heads=2)
    f = np.random.default_rng(0).normal(size=(3, 4, 4))
    assert np.array_equal(fu.fuse_level(Tensor(f), Tensor(np.zeros((3, 4, 4))), cfg, ParameterStore(0), "add").data, f)
    store = ParameterStore(0)
    fu.init_level_params(store, cfg, "concat", 3, 2, (4, 4))
    out = fu.fuse_level(Tensor(f), Tensor(np.ones((2, 4, 4))), cfg, store, "concat")
    assert out.shape == (6, 4, 4)


def test_fuse_level_tff_full_width():
    cfg = fu.FusionConfig(blocks=1)
    store = ParameterStore(0)
    fu.init_level_params(store, cfg, "tff", 8, 8, (16, 16))
    rng = np.random.default_rng(0)
    out = fu.fuse_level(Tensor(rng.normal(size=(8, 16, 16))), Tensor(rng.normal(size=(8, 16, 16))), cfg, store)
    assert out.shape == (512, 16, 16)


def test_fuse_level_errors():
    cfg = fu.FusionConfig(p=1, d_dim=4, heads=2)
    with pytest.raises(ConfigError):
        fu.fuse_level(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((3, 4, 4))), cfg, ParameterStore(0), "add")
    with pytest.raises(ConfigError):
        fu.fuse_level(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 2, 2))), cfg, ParameterStore(0), "add")
    with pytest.raises(ConfigError):
        fu.fuse_level(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 4, 4))), cfg, ParameterStore(0), "mean")
    with pytest.raises(ConfigError):
        fu.init_level_params(ParameterStore(0), cfg, "add", 2, 3, (4, 4))


def test_fuse_level_tff_gradient_on_four_patches():
    cfg = fu.FusionConfig(p=2, d_dim=4, heads=2, blocks=1, mlp_ratio=2, dropout_rate=0.0)
    store = ParameterStore(5)
    fu.init_level_params(store, cfg, "tff", 2, 2, (4, 4))
    rng = np.random.default_rng(0)
    f = Tensor(rng.uniform(-1, 1, (2, 4, 4)), requires_grad=True)
    g = Tensor(rng.uniform(-1, 1, (2, 4, 4)), requires_grad=True)
    params = [t for n, t in store.trainable_items() if not n.endswith("k.bias")]
    err = grad_check(lambda a, b, *_: fu.fuse_level(a, b, cfg, store), [f, g] + params, eps=1e-5)
    assert err <= 1e-4
