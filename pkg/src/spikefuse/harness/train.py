"""Offline training loop and evaluation helpers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backbones import clamp_thresholds
from ..errors import ConfigError, TrainingDivergedError
from ..events import SynthConfig, synth_sequence
from ..fusion import Context
from ..heads import loss_components
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config_text
from .metrics import evaluate_metrics
from .model import Tracker
from .optim import AdamState, adam_step, lr_schedule

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    tracker: Tracker
    losses: list = field(default_factory=list)
    cls_losses: list = field(default_factory=list)
    reg_losses: list = field(default_factory=list)
    checkpoint: Path | None = None


def make_sequence(config, seed=None, frames=None):
    synth = SynthConfig(target_size=config.target_size)
    return synth_sequence(config.data_seed if seed is None else seed,
                          config.frames if frames is None else frames,
                          (config.image_size, config.image_size), config.n_steps, synth)


def sample_pairs(n_frames, batch, max_gap, rng):
    """Template/search index pairs: template i, search i + gap with gap uniform in [1, max_gap]."""
    pairs = []
    for _ in range(batch):
        i = int(rng.integers(0, n_frames - 1))
        gap = int(rng.integers(1, max_gap + 1))
        pairs.append((i, min(i + gap, n_frames - 1)))
    return pairs


def smoothed(values, window=20):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        window = max(1, len(v))
    return np.convolve(v, np.ones(window) / window, mode="valid")


def _first_nonfinite(tracker, named):
    for name, t in named:
        if not np.all(np.isfinite(t.data)):
            return name
    for name, t in tracker.params.items():
        if not np.all(np.isfinite(t.data)):
            return name
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return name + ".grad"
    return "loss"


def train(config, data=None, log_path=None, checkpoint_path=None, tracker=None, progress=None):
    """Train a tracker on one sequence of MultimodalSamples.

    Each step samples ``batch_size`` template/search pairs, runs both frames
    through the backbones and fusion, scores the heads, and applies one Adam
    update with separate learning rates for backbone and remaining parameters.
    """
    config.validate()
    if data is None:
        data = make_sequence(config)
    if len(data) < 2:
        raise ConfigError("training needs at least two frames")
    tracker = tracker or Tracker(config)
    params = tracker.params
    sample_rng = np.random.default_rng([config.seed, 1])
    ctx = Context(training=True, rng=np.random.default_rng([config.seed, 2]))
    state = AdamState()
    steps_per_epoch = config.steps_per_epoch or max(1, math.ceil((len(data) - 1) / config.batch_size))
    result = TrainResult(tracker)
    log_fh = open(log_path, "w") if log_path else None
    if log_fh:
        log_fh.write("step epoch loss l_cls l_reg\n")
    step = 0
    try:
        for epoch in range(config.epochs):
            lr_b = lr_schedule(config.lr_backbone, epoch, config.lr_decay)
            lr_o = lr_schedule(config.lr_other, epoch, config.lr_decay)
            lrs = {n: (lr_b if tracker.is_backbone(n) else lr_o) for n, _ in params.trainable_items()}
            for _ in range(steps_per_epoch):
                pairs = sample_pairs(len(data), config.batch_size, config.max_gap, sample_rng)
                scores, labels, ious, gts = [], [], [], []
                for i, j in pairs:
                    s, lab, iou, gt = tracker.pair_terms(data[i], data[j], sample_rng, ctx)
                    scores.append(s.values)
                    labels.append(lab.values)
                    ious.append(iou)
                    gts.append(gt)
                total, l_cls, l_reg = loss_components(scores, labels, ious, gts, config.beta)
                loss = total.item()
                if not math.isfinite(loss):
                    bad = _first_nonfinite(tracker, [("score", s) for s in scores] + [("iou", t) for t in ious])
                    raise TrainingDivergedError(f"non-finite loss at step {step}; first bad tensor: {bad}")
                params.zero_grad()
                total.backward()
                grads = {n: t.grad for n, t in params.trainable_items() if t.grad is not None}
                for n, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        raise TrainingDivergedError(f"non-finite gradient at step {step}: {n}")
                adam_step(params, grads, lrs, state)
                clamp_thresholds(params)
                result.losses.append(loss)
                result.cls_losses.append(l_cls.item())
                result.reg_losses.append(l_reg.item())
                if log_fh:
                    log_fh.write(f"{step} {epoch} {loss:.10g} {l_cls.item():.10g} {l_reg.item():.10g}\n")
                if progress:
                    progress(step, loss)
                step += 1
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, config.to_text(), config.seed)
        result.checkpoint = Path(checkpoint_path)
    return result


def load_tracker(path):
    state, text, seed = load_checkpoint(path)
    config = parse_config_text(text, TrainConfig())
    tracker = Tracker(config)
    tracker.params.load_state(state)
    return tracker


def evaluate(tracker, samples):
    results = tracker.track(samples)
    return evaluate_metrics(results), results
