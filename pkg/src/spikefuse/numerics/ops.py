"""Differentiable tensor operations, each with an explicit backward."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), backward)


def relu(x):
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    inside = (x.data > lo) & (x.data < hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def square(x):
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), backward)


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# -- structural ----------------------------------------------------------------

def reshape(x, shape):
    shape = tuple(shape)
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make_node(out, (x,), lambda g: (np.transpose(g, inv),))


def index(x, idx):
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(out, (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_node(out, tuple(tensors), backward)


def stack(tensors):
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return make_node(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, weight, bias):
    """``x @ weight + bias`` for x of shape N x F_in and weight F_in x F_out."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data + bias.data

    def backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return make_node(out, (x, weight, bias), backward)


def conv2d(x, kernel, bias, stride=1, padding=0):
    """2-D cross-correlation of a C_in x H x W map with zero padding."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected CxHxW input and 4-d kernel, got {x.shape}, {kernel.shape}")
    c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, kernel expects {k_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d: stride must be positive and padding non-negative")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # cols: (C_in*kh*kw) x (ho*wo)
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * kh * kw, ho * wo)
    wmat = kernel.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, ho, wo) + bias.data[:, None, None]

    def backward(g):
        g2 = g.reshape(c_out, ho * wo)
        gk = (g2 @ cols.T).reshape(kernel.shape)
        gb = g2.sum(axis=1)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c_in, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = gxp[:, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk, gb

    return make_node(out, (x, kernel, bias), backward)


# -- normalization / attention primitives --------------------------------------

def layer_norm(x, gain, offset, eps=1e-5):
    """Normalize each row of an N x F matrix, then apply gain and offset."""
    if x.ndim != 2 or gain.shape != (x.shape[1],) or offset.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, offset {offset.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def backward(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_node(out, (x, gain, offset), backward)


def softmax_rows(x):
    """Row-wise softmax with per-row max subtraction."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_node(y, (x,), backward)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


# -- spiking ---------------------------------------------------------------------

def surrogate_grad(x):
    """Triangular surrogate derivative of the spike step: max(0, 1 - |x|)."""
    return np.maximum(0.0, 1.0 - np.abs(x))


def spike(v):
    """Heaviside step (1 where v >= 0) whose backward uses ``surrogate_grad``."""
    out = (v.data >= 0).astype(np.float64)
    return make_node(out, (v,), lambda g: (g * surrogate_grad(v.data),))


__all__ = [
    "Tensor", "add", "sub", "mul", "relu", "clamp", "square", "sum", "mean",
    "reshape", "transpose", "index", "concat", "stack", "matmul", "linear",
    "conv2d", "layer_norm", "softmax_rows", "dropout", "surrogate_grad", "spike",
]
