"""Hybrid frame/event object tracking on a small numpy autodiff core."""
from . import backbones, energy, events, fusion, heads, numerics
from .errors import SpikeFuseError

__version__ = "0.1.0"
