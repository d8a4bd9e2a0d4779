"""MAC/AC operation counts and energy estimates for ANN vs SNN backbones.

Counts follow the per-layer convolution formula K^2 * C_in * H_out * W_out *
C_out literally (padding-clipped synapses are not subtracted). In the SNN only
the first layer, which sees real-valued input, performs MACs; every later
layer performs one AC per presynaptic spike and synapse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DomainError, RatioUndefinedError

E_MAC_PJ = 4.6
E_AC_PJ = 0.9

# a measured rate is spikes / (neurons * steps); any such ratio with a
# denominator below this is recovered exactly from its float value
_RATE_DENOMINATOR = 10 ** 7


@dataclass(frozen=True)
class LayerOpSpec:
    kernel: int
    in_channels: int
    out_h: int
    out_w: int
    out_channels: int
    index: int = 1
    steps: int = 1

    def __post_init__(self):
        if min(self.kernel, self.in_channels, self.out_h, self.out_w, self.out_channels, self.steps) < 1:
            raise ConfigError(f"layer extents must be positive: {self}")

    @property
    def ops(self):
        return self.kernel ** 2 * self.in_channels * self.out_h * self.out_w * self.out_channels


@dataclass
class FiringRateStats:
    """Firing rate of the spikes *entering* each layer, keyed by layer index."""

    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        for n, fr in self.rates.items():
            if not 0.0 <= fr <= 1.0:
                raise DomainError(f"firing rate of layer {n} outside [0, 1]: {fr}")

    def __getitem__(self, n):
        return self.rates[n]

    def __contains__(self, n):
        return n in self.rates

    @classmethod
    def constant(cls, layers, value):
        return cls({l.index: float(value) for l in layers if l.index >= 2})


@dataclass
class EnergyReport:
    mac_ann: float
    mac_snn: float
    ac_snn: float
    phi_ann: float
    phi_snn: float
    eta: float
    e_mac: float = E_MAC_PJ
    e_ac: float = E_AC_PJ

    @property
    def savings(self):
        return 1.0 - self.eta

    def as_dict(self):
        return {
            "mac_ann": self.mac_ann, "ac_ann": 0, "mac_snn": self.mac_snn, "ac_snn": self.ac_snn,
            "e_mac_pj": self.e_mac, "e_ac_pj": self.e_ac,
            "phi_ann_pj": self.phi_ann, "phi_snn_pj": self.phi_snn,
            "eta": self.eta, "savings": self.savings,
        }

    def to_text(self):
        return "\n".join([
            "Backbone energy estimate",
            f"  ANN  MAC = {self.mac_ann:,.0f}   AC = 0",
            f"  SNN  MAC = {self.mac_snn:,.0f}   AC = {self.ac_snn:,.1f}",
            f"  E_MAC = {self.e_mac} pJ, E_AC = {self.e_ac} pJ",
            f"  Phi_ANN = {self.phi_ann:,.1f} pJ",
            f"  Phi_SNN = {self.phi_snn:,.1f} pJ",
            f"  eta (Phi_SNN / Phi_ANN) = {self.eta:.4f}",
            f"  savings (1 - eta)       = {self.savings:.4f}",
        ])

    def to_keyvalue(self):
        return "\n".join(f"{k}={v}" for k, v in self.as_dict().items())


def count_ann_macs(layers):
    if not layers:
        raise ConfigError("need at least one layer")
    return sum(l.ops for l in layers)


def count_snn_ops(layers, fr):
    """Return (MAC, AC) for an SNN with the given per-layer input firing rates."""
    if not layers:
        raise ConfigError("need at least one layer")
    layers = sorted(layers, key=lambda l: l.index)
    steps = layers[0].steps
    mac = steps * layers[0].ops
    ac = Fraction(0)
    for l in layers[1:]:
        if l.index not in fr:
            raise ConfigError(f"no firing rate for layer {l.index}")
        ac += Fraction(fr[l.index]).limit_denominator(_RATE_DENOMINATOR) * l.ops
    ac *= steps
    return mac, int(ac) if ac.denominator == 1 else float(ac)


def measure_firing_rate(trains):
    """Mean spike probability of one layer's output.

    ``trains`` is a sequence (samples and/or time steps) of binary arrays, or a
    single array whose every entry is a spike indicator.
    """
    arrs = [np.asarray(t, dtype=np.float64) for t in (trains if isinstance(trains, (list, tuple)) else [trains])]
    if not arrs:
        raise DomainError("no spikes to measure")
    total = 0.0
    count = 0
    for a in arrs:
        if not np.all((a == 0) | (a == 1)):
            raise DomainError("spike trains must be binary")
        total += a.sum()
        count += a.size
    return total / count


def firing_rates_from_layer_trains(layer_trains):
    """Map spiking layer outputs to the input rate of the following conv layer.

    ``layer_trains[k]`` holds the output spikes of layer k+1; those spikes feed
    layer k+2, so they define FR_{k+2}.
    """
    return FiringRateStats({k + 2: measure_firing_rate(tr) for k, tr in enumerate(layer_trains[:-1])})


def energy_report(ann_layers, snn_layers, fr, e_mac=E_MAC_PJ, e_ac=E_AC_PJ):
    if e_mac <= 0 or e_ac <= 0:
        raise ConfigError("energy per operation must be positive")
    mac_ann = count_ann_macs(ann_layers)
    mac_snn, ac_snn = count_snn_ops(snn_layers, fr)
    phi_ann = e_mac * mac_ann
    if phi_ann == 0:
        raise RatioUndefinedError("ANN energy is zero; eta undefined")
    phi_snn = e_mac * mac_snn + e_ac * ac_snn
    return EnergyReport(mac_ann, mac_snn, ac_snn, phi_ann, phi_snn, phi_snn / phi_ann, e_mac, e_ac)


def enumerate_synaptic_ops(in_spikes, kernel, out_channels):
    """Per-spike oracle: every presynaptic spike drives kernel^2 * out_channels synapses.

    ``in_spikes`` is an iterable of binary arrays (one per time step). This is
    the full fan-out convention, which matches the formula count whenever a
    layer keeps the spatial size of its input (stride 1, same padding).
    """
    total = 0
    for s in in_spikes:
        a = np.asarray(s)
        for idx in zip(*np.nonzero(a)):
            total += kernel * kernel * out_channels
    return total


def layer_specs(config, size, steps=1):
    """LayerOpSpec list for the SNN backbone architecture at a square input size."""
    specs = []
    c_in = config.in_channels
    h = w = size
    for n, s in enumerate(config.layers(), start=1):
        h = (h + 2 * s.padding - s.kernel) // s.stride + 1
        w = (w + 2 * s.padding - s.kernel) // s.stride + 1
        specs.append(LayerOpSpec(s.kernel, c_in, h, w, s.out_channels, n, steps))
        c_in = s.out_channels
    return specs
