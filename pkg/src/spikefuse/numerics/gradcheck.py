"""Central finite-difference oracle for backward passes."""
from __future__ import annotations

import numpy as np

from ..errors import GradientMismatchError, OracleInvalidError
from .tensor import Tensor, no_grad


def relative_error(a, b):
    """Elementwise |a-b| / max(|a|, |b|, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _scalarize(out, weights):
    if out.data.size == 1:
        return out
    from . import ops
    return ops.sum(ops.mul(out, Tensor(weights)))


def grad_check(fn, inputs, eps=1e-5, tol=None, seed=0):
    """Compare backward gradients of ``fn(*inputs)`` against central differences.

    Only inputs with ``requires_grad`` are checked; frozen ones are left alone.
    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. Returns the maximum relative error; raises
    ``GradientMismatchError`` when ``tol`` is given and exceeded.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    with no_grad():
        first = fn(*inputs)
        second = fn(*inputs)
    if first.shape != second.shape or not np.array_equal(first.data, second.data):
        raise OracleInvalidError("operation is not deterministic under repeated evaluation")
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=first.shape)

    checked = [t for t in inputs if isinstance(t, Tensor) and t.requires_grad]
    for t in checked:
        t.grad = None
    _scalarize(fn(*inputs), weights).backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in checked]

    worst = 0.0
    with no_grad():
        for t, ga in zip(checked, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _scalarize(fn(*inputs), weights).item()
                flat[i] = orig - eps
                fm = _scalarize(fn(*inputs), weights).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                worst = max(worst, float(relative_error(gflat[i], num)))
    for t in checked:
        t.grad = None
    if tol is not None and worst > tol:
        raise GradientMismatchError(f"max relative gradient error {worst:.3e} exceeds {tol:.1e}")
    return worst
