"""Frame (ANN) and event (SNN) feature extractors.

Both backbones expose a low-level stage at stride 8 and a high-level stage at
stride 16, so their outputs share spatial size for fusion.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, ShapeError
from .numerics import Tensor, ops
from .numerics.ops import surrogate_grad  # re-exported: the spike backward

DEFAULT_ALPHA = 0.7
DEFAULT_U_TH = 1.0
U_TH_MIN = 1e-3

_SPEC_RE = re.compile(r"^C(\d+)k(\d+)s(\d+)p(\d+)$")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int
    padding: int
    bn: bool = False

    def __str__(self):
        s = f"C{self.out_channels}k{self.kernel}s{self.stride}p{self.padding}"
        return s + "-BN" if self.bn else s


def parse_conv_specs(text):
    """Parse compact layer notation such as ``C64k11s4p5-BN-C128k5s2p2``."""
    specs = []
    for tok in (t.strip() for t in text.split("-")):
        if not tok:
            continue
        if tok.upper() == "BN":
            if not specs:
                raise ConfigError(f"BN before any conv layer in {text!r}")
            last = specs.pop()
            specs.append(ConvSpec(last.out_channels, last.kernel, last.stride, last.padding, True))
            continue
        m = _SPEC_RE.match(tok)
        if not m:
            raise ConfigError(f"cannot parse conv spec {tok!r}")
        c, k, s, p = (int(g) for g in m.groups())
        if c < 1 or k < 1 or s < 1:
            raise ConfigError(f"conv spec {tok!r} must have positive channels, kernel and stride")
        specs.append(ConvSpec(c, k, s, p))
    return specs


def format_conv_specs(specs):
    return "-".join(str(s) for s in specs)


def _stride(specs):
    return int(np.prod([s.stride for s in specs])) if specs else 1


def _out_size(n, specs):
    for s in specs:
        n = (n + 2 * s.padding - s.kernel) // s.stride + 1
    return n


@dataclass
class AnnBackboneConfig:
    in_channels: int = 3
    low: list = field(default_factory=lambda: parse_conv_specs(
        "C32k3s2p1-C64k3s2p1-C128k3s2p1-C128k3s1p1"))
    high: list = field(default_factory=lambda: parse_conv_specs("C256k3s2p1-C256k3s1p1"))

    def validate(self):
        if _stride(self.low) != 8 or _stride(self.low) * _stride(self.high) != 16:
            raise ConfigError("ANN stages must reach cumulative strides 8 (low) and 16 (high)")


@dataclass
class SnnBackboneConfig:
    in_channels: int = 1
    low: list = field(default_factory=lambda: parse_conv_specs("C64k11s4p5-C128k5s2p2"))
    high: list = field(default_factory=lambda: parse_conv_specs("C256k3s2p1"))
    alpha: float = DEFAULT_ALPHA
    u_th_init: float = DEFAULT_U_TH

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"membrane decay alpha must lie in (0, 1), got {self.alpha}")
        if self.u_th_init <= 0:
            raise ConfigError("threshold must be positive")
        if _stride(self.low) != 8 or _stride(self.low) * _stride(self.high) != 16:
            raise ConfigError("SNN convl_x must reach stride 8 and convh_x stride 16")

    def layers(self):
        return list(self.low) + list(self.high)


def _add_conv(scope, name, c_in, spec):
    fan_in = c_in * spec.kernel * spec.kernel
    scope.add(f"{name}.weight", (spec.out_channels, c_in, spec.kernel, spec.kernel), fan_in=fan_in)
    scope.add(f"{name}.bias", (spec.out_channels,), fan_in=fan_in)
    if spec.bn:
        scope.add(f"{name}.bn_gain", (spec.out_channels,), init="ones")
        scope.add(f"{name}.bn_offset", (spec.out_channels,), init="zeros")


def init_ann_params(store, config, prefix="ann"):
    scope = store.scoped(prefix)
    c = config.in_channels
    for stage in ("low", "high"):
        for i, spec in enumerate(getattr(config, stage)):
            _add_conv(scope, f"{stage}.{i}", c, spec)
            c = spec.out_channels


def init_snn_params(store, config, prefix="snn"):
    scope = store.scoped(prefix)
    c = config.in_channels
    for stage in ("low", "high"):
        for i, spec in enumerate(getattr(config, stage)):
            _add_conv(scope, f"{stage}.{i}", c, spec)
            scope.add(f"{stage}.{i}.u_th", (1,), init="const", value=config.u_th_init)
            c = spec.out_channels


def channel_norm(x, gain, offset, eps=1e-5):
    """Per-channel normalization over the spatial extent of one C x H x W map."""
    c, h, w = x.shape
    ones = Tensor(np.ones(h * w))
    zeros = Tensor(np.zeros(h * w))
    y = ops.layer_norm(ops.reshape(x, (c, h * w)), ones, zeros, eps)
    y = ops.add(ops.mul(y, ops.reshape(gain, (c, 1))), ops.reshape(offset, (c, 1)))
    return ops.reshape(y, (c, h, w))


def _conv(x, scope, name, spec):
    y = ops.conv2d(x, scope[f"{name}.weight"], scope[f"{name}.bias"], spec.stride, spec.padding)
    if spec.bn:
        y = channel_norm(y, scope[f"{name}.bn_gain"], scope[f"{name}.bn_offset"])
    return y


def ann_forward(frame, config, params, prefix="ann"):
    """Return (F_l, F_h): low-level map at stride 8, high-level map at stride 16."""
    if not isinstance(frame, Tensor):
        frame = Tensor(frame)
    if frame.ndim != 3 or frame.shape[0] != config.in_channels:
        raise ShapeError(f"expected a {config.in_channels} x H x W frame, got {frame.shape}")
    total = _stride(config.low) * _stride(config.high)
    if frame.shape[1] % total or frame.shape[2] % total:
        raise ShapeError(f"frame size {frame.shape[1:]} not divisible by {total}")
    scope = params.scoped(prefix)
    x = frame
    for i, spec in enumerate(config.low):
        x = ops.relu(_conv(x, scope, f"low.{i}", spec))
    f_low = x
    return f_low, ann_high(f_low, config, params, prefix)


def ann_high(f_low, config, params, prefix="ann"):
    scope = params.scoped(prefix)
    x = f_low
    for i, spec in enumerate(config.high):
        x = ops.relu(_conv(x, scope, f"high.{i}", spec))
    return x


@dataclass
class LIFLayerState:
    u: Tensor
    o_prev: Tensor

    @classmethod
    def zeros(cls, shape):
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lif_step(state, synaptic_input, alpha, u_th):
    """One iteration of the leaky integrate-and-fire neuron.

    u_t = alpha * (1 - o_{t-1}) * u_{t-1} + input;  o_t = step(u_t - u_th).
    ``u_th`` may be a float or a (1,)-shaped trainable Tensor.
    """
    if state.u.shape != synaptic_input.shape:
        raise DimensionError(f"LIF state {state.u.shape} does not match input {synaptic_input.shape}")
    carried = ops.mul(ops.mul(ops.sub(1.0, state.o_prev), state.u), alpha)
    u = ops.add(carried, synaptic_input)
    o = ops.spike(ops.sub(u, u_th))
    return LIFLayerState(u, o), o


def _as_input(s):
    if isinstance(s, Tensor):
        return s if s.ndim == 3 else ops.reshape(s, (1,) + s.shape)
    arr = s.normalized() if hasattr(s, "normalized") else np.asarray(s, dtype=np.float64)
    return Tensor(arr[None] if arr.ndim == 2 else arr)


def snn_forward(slices, config, params, prefix="snn", return_membranes=False):
    """Run the spiking stack over the N slices of one interval.

    Slices are fed one per time step (pixel values scaled by 1/254); membrane
    state starts at zero and persists across the N steps. Returns the spike
    trains (G_l per step, G_h per step).
    """
    if len(slices) == 0:
        raise ConfigError("snn_forward needs at least one time step")
    scope = params.scoped(prefix)
    layers = [("low", i, s) for i, s in enumerate(config.low)] + \
             [("high", i, s) for i, s in enumerate(config.high)]
    states = [None] * len(layers)
    low_train, high_train, membranes = [], [], []
    for sl in slices:
        x = _as_input(sl)
        step_u = []
        for li, (stage, i, spec) in enumerate(layers):
            name = f"{stage}.{i}"
            current = _conv(x, scope, name, spec)
            if states[li] is None:
                states[li] = LIFLayerState.zeros(current.shape)
            states[li], x = lif_step(states[li], current, config.alpha, scope[f"{name}.u_th"])
            step_u.append(states[li].u)
            if stage == "low" and i == len(config.low) - 1:
                low_train.append(x)
        if config.high:
            high_train.append(x)
        membranes.append(step_u)
    if return_membranes:
        return low_train, high_train, membranes
    return low_train, high_train


def snn_layer_trains(slices, config, params, prefix="snn"):
    """Spike trains of every spiking layer (list over layers of list over steps)."""
    from .numerics import no_grad

    scope = params.scoped(prefix)
    layers = [("low", i, s) for i, s in enumerate(config.low)] + \
             [("high", i, s) for i, s in enumerate(config.high)]
    states = [None] * len(layers)
    trains = [[] for _ in layers]
    with no_grad():
        for sl in slices:
            x = _as_input(sl)
            for li, (stage, i, spec) in enumerate(layers):
                name = f"{stage}.{i}"
                current = _conv(x, scope, name, spec)
                if states[li] is None:
                    states[li] = LIFLayerState.zeros(current.shape)
                states[li], x = lif_step(states[li], current, config.alpha, scope[f"{name}.u_th"])
                trains[li].append(x.data)
    return trains


def rate_code(train):
    """Average firing rate over the N steps of a spike train."""
    if len(train) == 0:
        raise ConfigError("cannot rate-code an empty spike train")
    acc = train[0]
    for t in train[1:]:
        acc = ops.add(acc, t)
    return ops.mul(acc, 1.0 / len(train))


def clamp_thresholds(params, prefix="snn"):
    for name, t in params.items():
        if name.startswith(prefix + ".") and name.endswith(".u_th"):
            np.maximum(t.data, U_TH_MIN, out=t.data)


def feature_size(config, size):
    """Spatial extent after the low and high stages for a square input."""
    low = _out_size(size, config.low)
    return low, _out_size(low, config.high)


__all__ = [
    "ConvSpec", "parse_conv_specs", "format_conv_specs", "AnnBackboneConfig",
    "SnnBackboneConfig", "init_ann_params", "init_snn_params", "ann_forward", "ann_high",
    "LIFLayerState", "lif_step", "surrogate_grad", "snn_forward", "snn_layer_trains",
    "rate_code", "clamp_thresholds", "feature_size", "channel_norm",
]
