"""Transformer-based fusion of frame and event feature maps.

Feature maps are cut into non-overlapping patches and embedded, refined by
self-attention blocks per modality, mixed by cross-attention blocks that
attend over the concatenation of both modalities, and finally decoded back to
a feature map. No positional encoding is used anywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, ops

STRATEGIES = ("tff", "concat", "add")


@dataclass
class FusionConfig:
    p: int = 4
    d_dim: int = 512
    heads: int = 2
    blocks: int = 2
    mlp_ratio: int = 4
    dropout_rate: float = 0.1
    ln_eps: float = 1e-5

    def validate(self):
        if self.p < 1 or self.blocks < 1 or self.heads < 1 or self.mlp_ratio < 1:
            raise ConfigError("p, blocks, heads and mlp_ratio must be positive")
        if self.d_dim % self.heads:
            raise ConfigError(f"d_dim {self.d_dim} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")


@dataclass
class PatchEmbedding:
    rows: Tensor          # N x D_dim
    source: str = "fused"

    @property
    def n(self):
        return self.rows.shape[0]


class Context:
    """Per-forward switches: dropout on/off and its random stream."""

    def __init__(self, training=False, rng=None):
        self.training = training
        self.rng = rng if rng is not None else np.random.default_rng(0)


EVAL = Context(training=False)


# -- parameters ------------------------------------------------------------------

def _ln(scope, name, width):
    scope.add(f"{name}.gain", (width,), init="ones")
    scope.add(f"{name}.offset", (width,), init="zeros")


def _lin(scope, name, f_in, f_out):
    scope.add(f"{name}.weight", (f_in, f_out), fan_in=f_in)
    scope.add(f"{name}.bias", (f_out,), fan_in=f_in)


def init_embed_params(scope, flat_width, d_dim):
    _ln(scope, "ln_in", flat_width)
    _lin(scope, "proj", flat_width, d_dim)
    _ln(scope, "ln_out", d_dim)


def init_block_params(scope, d_dim, mlp_ratio, self_attention=True):
    _ln(scope, "ln", d_dim)
    if self_attention:
        for n in ("q", "k", "v"):
            _lin(scope, n, d_dim, d_dim)
    _lin(scope, "o", d_dim, d_dim)
    _lin(scope, "fc1", d_dim, mlp_ratio * d_dim)
    _lin(scope, "fc2", mlp_ratio * d_dim, d_dim)


def resample_matrix(src_hw, dst_hw):
    """Bilinear weights (src_h*src_w, dst_h*dst_w) mapping a coarse grid onto a finer or equal one."""
    def axis(n_src, n_dst):
        pos = np.clip((np.arange(n_dst) + 0.5) * n_src / n_dst - 0.5, 0.0, n_src - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = pos - lo
        m = np.zeros((n_src, n_dst))
        m[lo, np.arange(n_dst)] += 1.0 - frac
        m[hi, np.arange(n_dst)] += frac
        return m
    return np.kron(axis(src_hw[0], dst_hw[0]), axis(src_hw[1], dst_hw[1]))


def init_decoder_params(scope, d_dim, n_rows, out_hw, token_grid=None, out_grid=None):
    """Decoder parameters; with ``token_grid`` the projection starts as a spatial resampler.

    That start averages the frame and event token of each position (bilinearly
    resampled to ``out_grid``) plus a small random perturbation, so the decoded
    map begins spatially aligned with its input instead of scrambled.
    """
    _ln(scope, "ln_in", d_dim)
    _lin(scope, "proj", n_rows, out_hw)
    _ln(scope, "ln_out", out_hw)
    if token_grid is not None:
        base = resample_matrix(token_grid, out_grid)
        w = scope["proj.weight"]
        w.data[...] = 0.1 * w.data + 0.5 * np.concatenate([base, base], axis=0)


def init_tmff_params(scope, config):
    for name, sa in (("sat1", True), ("sat2", True), ("cat1", False), ("cat2", False)):
        init_block_params(scope.scoped(name), config.d_dim, config.mlp_ratio, sa)


def init_level_params(scope, config, strategy, c_frame, c_event, feat_hw, out_hw=None):
    """Parameters for one fusion level (low or high)."""
    if strategy == "tff":
        h, w = feat_hw
        config.validate()
        if h % config.p or w % config.p:
            raise ShapeError(f"feature map {h}x{w} not divisible by patch size {config.p}")
        n = h * w // (config.p ** 2)
        init_embed_params(scope.scoped("embed_frame"), config.p ** 2 * c_frame, config.d_dim)
        init_embed_params(scope.scoped("embed_event"), config.p ** 2 * c_event, config.d_dim)
        init_tmff_params(scope.scoped("tmff"), config)
        oh, ow = out_hw or feat_hw
        init_decoder_params(scope.scoped("decoder"), config.d_dim, 2 * n, oh * ow,
                            (h // config.p, w // config.p), (oh, ow))
    elif strategy == "concat":
        c = c_frame + c_event
        scope.add("mix.weight", (config.d_dim, c, 1, 1), fan_in=c)
        scope.add("mix.bias", (config.d_dim,), fan_in=c)
    elif strategy == "add":
        if c_frame != c_event:
            raise ConfigError(f"add fusion needs equal channels, got {c_frame} and {c_event}")
    else:
        raise ConfigError(f"unknown fusion strategy {strategy!r}")


def fused_channels(config, strategy, c_frame, c_event):
    return c_frame if strategy == "add" else config.d_dim


# -- patch embedding ----------------------------------------------------------------

def extract_patches(features, p):
    """C x H x W -> N x (p*p*C); patches in row-major order, each flattened (row, col, channel)."""
    c, h, w = features.shape
    if h % p or w % p:
        raise ShapeError(f"feature map {h}x{w} not divisible by patch size {p}")
    x = ops.reshape(features, (c, h // p, p, w // p, p))
    x = ops.transpose(x, (1, 3, 2, 4, 0))
    return ops.reshape(x, ((h // p) * (w // p), p * p * c))


def embed_patches(features, config, params, ctx=EVAL, source="fused"):
    if not isinstance(features, Tensor):
        features = Tensor(features)
    x = extract_patches(features, config.p)
    x = ops.layer_norm(x, params["ln_in.gain"], params["ln_in.offset"], config.ln_eps)
    x = ops.linear(x, params["proj.weight"], params["proj.bias"])
    x = ops.layer_norm(x, params["ln_out.gain"], params["ln_out.offset"], config.ln_eps)
    x = ops.dropout(x, config.dropout_rate, ctx.rng, ctx.training)
    return PatchEmbedding(x, source)


# -- attention ---------------------------------------------------------------------

def _rows(x):
    return x.rows if isinstance(x, PatchEmbedding) else x


def cross_attention(x, d, scale=None):
    """softmax(X D^T / scale) D with raw embeddings; scale defaults to sqrt(D_dim)."""
    x, d = _rows(x), _rows(d)
    if d.shape[0] != 2 * x.shape[0]:
        raise ShapeError(f"fusion embedding must have 2N = {2 * x.shape[0]} rows, got {d.shape[0]}")
    if d.shape[1] != x.shape[1]:
        raise ShapeError(f"embedding widths differ: {x.shape[1]} vs {d.shape[1]}")
    if scale is None:
        scale = math.sqrt(x.shape[1])
    att = ops.softmax_rows(ops.mul(ops.matmul(x, ops.transpose(d)), 1.0 / scale))
    return ops.matmul(att, d)


def _cols(x, a, b):
    return ops.index(x, (slice(None), slice(a, b)))


def _mlp(x, params):
    h = ops.relu(ops.linear(x, params["fc1.weight"], params["fc1.bias"]))
    return ops.linear(h, params["fc2.weight"], params["fc2.bias"])


def multihead_self_attention(y, params, heads):
    d_dim = y.shape[1]
    if d_dim % heads:
        raise ConfigError(f"d_dim {d_dim} is not divisible by {heads} heads")
    dh = d_dim // heads
    q = ops.linear(y, params["q.weight"], params["q.bias"])
    k = ops.linear(y, params["k.weight"], params["k.bias"])
    v = ops.linear(y, params["v.weight"], params["v.bias"])
    outs = []
    for h in range(heads):
        a, b = h * dh, (h + 1) * dh
        qh, kh, vh = _cols(q, a, b), _cols(k, a, b), _cols(v, a, b)
        att = ops.softmax_rows(ops.mul(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(dh)))
        outs.append(ops.matmul(att, vh))
    cat = outs[0] if heads == 1 else ops.concat(outs, axis=1)
    return ops.linear(cat, params["o.weight"], params["o.bias"])


def multihead_cross_attention(y, d, params, heads):
    """Cross-attention per head on column groups of y and D, then output mixing."""
    d_dim = y.shape[1]
    if d_dim % heads:
        raise ConfigError(f"d_dim {d_dim} is not divisible by {heads} heads")
    dh = d_dim // heads
    outs = [cross_attention(_cols(y, h * dh, (h + 1) * dh), _cols(d, h * dh, (h + 1) * dh),
                            scale=math.sqrt(dh)) for h in range(heads)]
    cat = outs[0] if heads == 1 else ops.concat(outs, axis=1)
    return ops.linear(cat, params["o.weight"], params["o.bias"])


def self_attn_block(x, params, heads, eps=1e-5):
    """X~ = MSA(LN(X)) + X;  out = MLP(X~) + X~."""
    x_rows = _rows(x)
    y = ops.layer_norm(x_rows, params["ln.gain"], params["ln.offset"], eps)
    xt = ops.add(multihead_self_attention(y, params, heads), x_rows)
    out = ops.add(_mlp(xt, params), xt)
    return PatchEmbedding(out, getattr(x, "source", "fused"))


def cross_attn_block(x, d, params, heads, eps=1e-5):
    """X~ = MCA(LN(X)) against D + X;  out = MLP(X~) + X~."""
    x_rows, d_rows = _rows(x), _rows(d)
    if d_rows.shape[0] != 2 * x_rows.shape[0]:
        raise ShapeError(f"fusion embedding must have 2N = {2 * x_rows.shape[0]} rows, got {d_rows.shape[0]}")
    y = ops.layer_norm(x_rows, params["ln.gain"], params["ln.offset"], eps)
    xt = ops.add(multihead_cross_attention(y, d_rows, params, heads), x_rows)
    out = ops.add(_mlp(xt, params), xt)
    return PatchEmbedding(out, getattr(x, "source", "fused"))


# -- fusion transformer -------------------------------------------------------------

def tmff_fuse(f_embed, g_embed, config, params):
    """Iterate sat/cat blocks ``config.blocks`` times; returns the 2N x D_dim fusion."""
    f, g = _rows(f_embed), _rows(g_embed)
    if f.shape != g.shape:
        raise ShapeError(f"modalities disagree: frame {f.shape}, event {g.shape}")
    sat1, sat2 = params.scoped("sat1"), params.scoped("sat2")
    cat1, cat2 = params.scoped("cat1"), params.scoped("cat2")
    eps = config.ln_eps
    for _ in range(config.blocks):
        f = self_attn_block(f, sat1, config.heads, eps).rows
        g = self_attn_block(g, sat2, config.heads, eps).rows
        d = ops.concat([f, g], axis=0)
        f = cross_attn_block(f, d, cat1, config.heads, eps).rows
        g = cross_attn_block(g, d, cat2, config.heads, eps).rows
    return PatchEmbedding(ops.concat([f, g], axis=0), "fused")


# -- decoding ------------------------------------------------------------------------

def decode_embeddings(t_embed, h, w, config, params, ctx=EVAL):
    """2N x D_dim -> D_dim x H x W via LayerNorm, transpose, Linear(2N, HW), LayerNorm."""
    if h < 1 or w < 1:
        raise ShapeError("decoder target must have positive size")
    x = _rows(t_embed)
    x = ops.layer_norm(x, params["ln_in.gain"], params["ln_in.offset"], config.ln_eps)
    x = ops.transpose(x)
    x = ops.linear(x, params["proj.weight"], params["proj.bias"])
    x = ops.layer_norm(x, params["ln_out.gain"], params["ln_out.offset"], config.ln_eps)
    x = ops.dropout(x, config.dropout_rate, ctx.rng, ctx.training)
    return ops.reshape(x, (x.shape[0], h, w))


# -- per-level fusion ---------------------------------------------------------------

def fuse_level(f, g, config, params, strategy="tff", out_hw=None, ctx=EVAL):
    """Fuse a frame map and an event map of equal spatial size."""
    if f.shape[1:] != g.shape[1:]:
        raise ConfigError(f"spatial sizes differ: {f.shape[1:]} vs {g.shape[1:]}")
    if strategy == "tff":
        fe = embed_patches(f, config, params.scoped("embed_frame"), ctx, "frame")
        ge = embed_patches(g, config, params.scoped("embed_event"), ctx, "event")
        t = tmff_fuse(fe, ge, config, params.scoped("tmff"))
        oh, ow = out_hw or f.shape[1:]
        return decode_embeddings(t, oh, ow, config, params.scoped("decoder"), ctx)
    if strategy == "concat":
        x = ops.concat([f, g], axis=0)
        return ops.conv2d(x, params["mix.weight"], params["mix.bias"])
    if strategy == "add":
        if f.shape != g.shape:
            raise ConfigError(f"add fusion needs identical shapes, got {f.shape} and {g.shape}")
        return ops.add(f, g)
    raise ConfigError(f"unknown fusion strategy {strategy!r}")
