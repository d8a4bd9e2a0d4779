"""Plain-text ``key = value`` configuration."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..backbones import AnnBackboneConfig, SnnBackboneConfig, parse_conv_specs
from ..errors import ConfigError
from ..fusion import STRATEGIES, FusionConfig

SEED_ENV = "SPIKEFUSE_SEED"


@dataclass
class TrainConfig:
    # optimisation
    epochs: int = 50
    batch_size: int = 20
    steps_per_epoch: int = 0          # 0: one pass over the template frames
    lr_backbone: float = 1e-4
    lr_other: float = 1e-3
    lr_decay: float = 0.9
    beta: float = 1.0
    seed: int = 0
    # neurons
    alpha: float = 0.7
    u_th_init: float = 1.0
    n_steps: int = 5
    # architecture
    image_size: int = 64
    ann_low: str = "C32k3s2p1-C64k3s2p1-C128k3s2p1-C128k3s1p1"
    ann_high: str = "C256k3s2p1-C256k3s1p1"
    snn_low: str = "C64k11s4p5-C128k5s2p2"
    snn_high: str = "C256k3s2p1"
    fusion_strategy: str = "tff"
    p: int = 4
    d_dim: int = 512
    heads: int = 2
    blocks: int = 2
    mlp_ratio: int = 4
    dropout: float = 0.1
    score_map_size: int = 0           # 0: native high-level resolution
    iou_mlp_width: int = 64
    # data and sampling
    frames: int = 60
    data_seed: int = 0
    max_gap: int = 5
    iou_candidates: int = 4
    box_jitter: float = 0.25
    target_size: float = 16.0
    # tracking
    refine_steps: int = 0
    refine_rate: float = 2.0

    def validate(self):
        if self.lr_backbone < 0 or self.lr_other < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.fusion_strategy not in STRATEGIES:
            raise ConfigError(f"fusion_strategy must be one of {STRATEGIES}, got {self.fusion_strategy!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.n_steps < 1:
            raise ConfigError("epochs, batch_size and n_steps must be positive")
        if self.max_gap < 1 or self.iou_candidates < 1:
            raise ConfigError("max_gap and iou_candidates must be positive")
        self.ann_config().validate()
        self.snn_config().validate()
        if self.fusion_strategy == "tff":
            self.fusion_config().validate()

    def ann_config(self):
        return AnnBackboneConfig(3, parse_conv_specs(self.ann_low), parse_conv_specs(self.ann_high))

    def snn_config(self):
        return SnnBackboneConfig(1, parse_conv_specs(self.snn_low), parse_conv_specs(self.snn_high),
                                 self.alpha, self.u_th_init)

    def fusion_config(self):
        return FusionConfig(self.p, self.d_dim, self.heads, self.blocks, self.mlp_ratio, self.dropout)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_text(self):
        return "\n".join(f"{f.name} = {getattr(self, f.name)}" for f in fields(self)) + "\n"


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(field, raw):
    typ = _TYPES[field.type] if isinstance(field.type, str) else field.type
    try:
        if typ is int:
            return int(raw, 0)
        if typ is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {field.name}: {raw!r}") from None


def parse_config_text(text, base=None):
    cfg = base or TrainConfig()
    by_name = {f.name: f for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key == "fusion":
            key = "fusion_strategy"
        if key not in by_name:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(by_name[key], val)
    cfg = dataclasses.replace(cfg, **updates)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed, 0))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    cfg.validate()
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def desk_config(**overrides):
    """Small CPU-friendly setup used by the demos and the toy training test."""
    cfg = TrainConfig(
        epochs=13, batch_size=4, steps_per_epoch=75,
        lr_backbone=1e-3, lr_other=1e-3,
        ann_low="C8k3s2p1-C16k3s2p1-C32k3s2p1-C32k3s1p1", ann_high="C32k3s2p1-C32k3s1p1",
        snn_low="C8k11s4p5-C32k5s2p2", snn_high="C32k3s2p1",
        p=1, d_dim=32, heads=2, blocks=1, mlp_ratio=2, dropout=0.0,
        score_map_size=0, iou_mlp_width=32, refine_steps=5,
    )
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg
