"""Named parameter storage with seeded initialization."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Map from parameter id to Tensor, iterated in lexicographic id order.

    Weights default to uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) drawn from a
    single seeded generator, so creation order plus seed fixes every value.
    """

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(np.uint64(seed % 2**64))
        self._params = {}
        self._trainable = {}

    def add(self, name, shape, fan_in=None, init="uniform", value=None, trainable=True):
        if name in self._params:
            raise KeyError(f"duplicate parameter id {name!r}")
        shape = tuple(shape)
        if init == "uniform":
            if fan_in is None:
                fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
            bound = np.sqrt(1.0 / fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "const":
            data = np.full(shape, float(value))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def trainable_items(self):
        return [(n, t) for n, t in self.items() if self._trainable[n]]

    def is_trainable(self, name):
        return self._trainable[name]

    def freeze(self, name):
        self._trainable[name] = False
        self._params[name].requires_grad = False

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def scoped(self, prefix):
        """View that prefixes every id, for building sub-modules."""
        return _Scope(self, prefix)

    def state(self):
        return {n: t.data.copy() for n, t in self.items()}

    def load_state(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"state missing parameters: {sorted(missing)}")
        for n, arr in state.items():
            if n not in self._params:
                raise KeyError(f"unexpected parameter {n!r}")
            if self._params[n].shape != tuple(arr.shape):
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {self._params[n].shape}")
            self._params[n].data[...] = arr


class _Scope:
    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def add(self, name, *args, **kwargs):
        return self.store.add(f"{self.prefix}.{name}", *args, **kwargs)

    def __getitem__(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def __contains__(self, name):
        return f"{self.prefix}.{name}" in self.store

    def scoped(self, prefix):
        return _Scope(self.store, f"{self.prefix}.{prefix}")

    @property
    def rng(self):
        return self.store.rng
