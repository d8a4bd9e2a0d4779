"""Finite-difference checks of every differentiable building block.

Each check builds a small seeded problem and returns the maximum relative
error between backward-pass and central-difference gradients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import backbones as bb
from .. import fusion as fu
from .. import heads as hd
from ..numerics import ParameterStore, Tensor, grad_check, ops

OP_TOL = 1e-4
PIPELINE_TOL = 1e-3


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _params(store):
    # softmax ignores a per-row shift, so key biases have an exactly zero
    # gradient; finite differences there measure pure rounding noise
    return [t for n, t in store.trainable_items() if not n.endswith("k.bias")]


def check_conv2d(rng, eps):
    x, k, b = _t(rng, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    e1 = grad_check(lambda x, k, b: ops.conv2d(x, k, b, stride=2, padding=1), [x, k, b], eps)
    e2 = grad_check(lambda x, k, b: ops.conv2d(x, k, b), [x, k, b], eps)
    return max(e1, e2)


def check_linear(rng, eps):
    return grad_check(ops.linear, [_t(rng, 3, 4), _t(rng, 4, 5), _t(rng, 5)], eps)


def check_layer_norm(rng, eps):
    return grad_check(ops.layer_norm, [_t(rng, 3, 6), _t(rng, 6), _t(rng, 6)], eps)


def check_softmax_rows(rng, eps):
    return grad_check(ops.softmax_rows, [_t(rng, 3, 5)], eps)


def check_channel_norm(rng, eps):
    return grad_check(bb.channel_norm, [_t(rng, 2, 3, 3), _t(rng, 2), _t(rng, 2)], eps)


def _block_store(rng_seed, d_dim=8, self_attention=True):
    store = ParameterStore(rng_seed)
    fu.init_block_params(store, d_dim, 2, self_attention)
    return store


def check_self_attention(rng, eps):
    store = _block_store(int(rng.integers(1 << 30)))
    x = _t(rng, 4, 8)
    return grad_check(lambda x, *_: fu.self_attn_block(x, store, 2).rows, [x] + _params(store), eps)


def check_cross_attention(rng, eps):
    store = _block_store(int(rng.integers(1 << 30)), self_attention=False)
    x, d = _t(rng, 4, 8), _t(rng, 8, 8)
    return grad_check(lambda x, d, *_: fu.cross_attn_block(x, d, store, 2).rows,
                      [x, d] + _params(store), eps)


def _fusion_cfg():
    return fu.FusionConfig(p=2, d_dim=8, heads=2, blocks=1, mlp_ratio=2, dropout_rate=0.0)


def check_embed(rng, eps):
    cfg = _fusion_cfg()
    store = ParameterStore(int(rng.integers(1 << 30)))
    fu.init_embed_params(store, cfg.p ** 2 * 3, cfg.d_dim)
    feats = _t(rng, 3, 4, 4)
    return grad_check(lambda f, *_: fu.embed_patches(f, cfg, store).rows, [feats] + _params(store), eps)


def check_decode(rng, eps):
    cfg = _fusion_cfg()
    store = ParameterStore(int(rng.integers(1 << 30)))
    fu.init_decoder_params(store, cfg.d_dim, 8, 9)
    t = _t(rng, 8, cfg.d_dim)
    return grad_check(lambda t, *_: fu.decode_embeddings(t, 3, 3, cfg, store), [t] + _params(store), eps)


def check_tmff(rng, eps):
    cfg = _fusion_cfg()
    store = ParameterStore(int(rng.integers(1 << 30)))
    fu.init_tmff_params(store, cfg)
    f, g = _t(rng, 4, cfg.d_dim), _t(rng, 4, cfg.d_dim)
    return grad_check(lambda f, g, *_: fu.tmff_fuse(f, g, cfg, store).rows, [f, g] + _params(store), eps)


def check_roi_pool(rng, eps):
    feats = _t(rng, 2, 5, 5)
    box = Tensor(np.array([9.3, 10.7, 8.2, 6.9]), requires_grad=True)
    return grad_check(lambda f, b: hd.roi_pool(f, b, 4.0), [feats, box], eps)


def check_iou_head(rng, eps):
    store = ParameterStore(int(rng.integers(1 << 30)))
    hd.init_iou_params(store, 3, 4, 6)
    t_l, t_h = _t(rng, 3, 6, 6), _t(rng, 4, 3, 3)
    v_l, v_h = _t(rng, 3), _t(rng, 4)
    box = Tensor(np.array([11.3, 12.6, 9.1, 10.2]), requires_grad=True)
    fn = lambda tl, th, vl, vh, b, *_: hd.predict_iou_modulated(  # noqa: E731
        ops.mul(tl, 0.3), ops.mul(th, 0.3), vl, vh, b, store, (4.0, 8.0))
    return grad_check(fn, [t_l, t_h, v_l, v_h, box] + _params(store), eps)


def check_losses(rng, eps):
    # scores kept clear of the hinge at 0 and labels clear of the target threshold
    s1 = rng.uniform(0.1, 1.0, size=(1, 3, 3)) * rng.choice([-1, 1], size=(1, 3, 3))
    s2 = rng.uniform(0.1, 1.0, size=(1, 3, 3)) * rng.choice([-1, 1], size=(1, 3, 3))
    labels = [np.where(rng.random((1, 3, 3)) < 0.5, 0.0, 0.6) for _ in range(2)]
    ious = Tensor(rng.uniform(0.1, 0.9, 3), requires_grad=True)
    scores = [Tensor(s1, requires_grad=True), Tensor(s2, requires_grad=True)]
    gts = rng.uniform(0, 1, 3)
    fn = lambda a, b, i: hd.total_loss([a, b], labels, [i], [gts], beta=0.7)  # noqa: E731
    return grad_check(fn, scores + [ious], eps)


def check_pipeline(rng, eps):
    """Fusion, classifier, IoU head and loss on a toy with 4 patches per level.

    Backbone outputs enter as inputs: spikes have no finite-difference
    derivative, so their surrogate chain is checked separately.
    """
    cfg = _fusion_cfg()
    store = ParameterStore(int(rng.integers(1 << 30)))
    fu.init_level_params(store.scoped("lvl"), cfg, "tff", 3, 2, (4, 4))
    hd.init_classifier_params(store.scoped("cls"), cfg.d_dim)
    hd.init_iou_params(store.scoped("iou"), cfg.d_dim, cfg.d_dim, 4)
    f_t, g_t = _t(rng, 3, 4, 4), Tensor(rng.uniform(0, 1, (2, 4, 4)), requires_grad=True)
    f_s, g_s = _t(rng, 3, 4, 4), Tensor(rng.uniform(0, 1, (2, 4, 4)), requires_grad=True)
    stride = 8.0
    b_t, b_s = hd.BBox(15.2, 17.1, 12.3, 13.4), hd.BBox(16.8, 14.9, 12.1, 11.7)
    label = hd.gaussian_label(b_s, (1, 4, 4), stride)
    cands = [hd.BBox(17.9, 15.3, 11.2, 12.8), hd.BBox(14.1, 13.2, 13.3, 10.9)]
    gts = np.array([hd.box_iou(c, b_s) for c in cands])

    def fn(ft, gt, fs, gs, *_):
        lvl = store.scoped("lvl")
        tt = fu.fuse_level(ft, gt, cfg, lvl)
        ts = fu.fuse_level(fs, gs, cfg, lvl)
        score = hd.classify(tt, ts, b_t, store.scoped("cls"), stride)
        v_l, v_h = hd.modulation_vectors(tt, tt, b_t, (stride, stride))
        preds = ops.concat([hd.predict_iou_modulated(ts, ts, v_l, v_h, c, store.scoped("iou"),
                                                     (stride, stride)) for c in cands], axis=0)
        return hd.total_loss([score.values], [label.values], [preds], [gts])

    return grad_check(fn, [f_t, g_t, f_s, g_s] + _params(store), eps)


CHECKS = {
    "conv2d": (check_conv2d, OP_TOL),
    "linear": (check_linear, OP_TOL),
    "layer_norm": (check_layer_norm, OP_TOL),
    "softmax_rows": (check_softmax_rows, OP_TOL),
    "channel_norm": (check_channel_norm, OP_TOL),
    "self_attention": (check_self_attention, OP_TOL),
    "cross_attention": (check_cross_attention, OP_TOL),
    "embed": (check_embed, OP_TOL),
    "decode": (check_decode, OP_TOL),
    "tmff": (check_tmff, OP_TOL),
    "roi_pool": (check_roi_pool, OP_TOL),
    "iou_head": (check_iou_head, OP_TOL),
    "losses": (check_losses, OP_TOL),
    "pipeline": (check_pipeline, PIPELINE_TOL),
}


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return self.max_error <= self.tolerance


def run_suite(names=None, seed=0, eps=1e-5):
    """Run the named checks (all by default); returns a list of CheckResult."""
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown gradient check(s): {', '.join(unknown)}; known: {', '.join(CHECKS)}")
    out = []
    for i, name in enumerate(names):
        fn, tol = CHECKS[name]
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        err = fn(rng, eps)
        out.append(CheckResult(name, err, tol, time.perf_counter() - t0))
    return out
