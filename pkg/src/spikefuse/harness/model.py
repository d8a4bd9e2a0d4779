"""End-to-end tracker: hybrid backbones, per-level fusion, and heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import backbones as bb
from .. import fusion as fu
from .. import heads as hd
from ..numerics import ParameterStore, Tensor, enable_grad, no_grad, ops
from .metrics import TrackResult

BACKBONE_PREFIXES = ("ann.", "snn.")


@dataclass
class FusedFeatures:
    low: Tensor
    high: Tensor
    stride_low: float
    stride_high: float


class Tracker:
    """Parameters plus forward passes for one model configuration."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.ann = config.ann_config()
        self.snn = config.snn_config()
        self.fusion = config.fusion_config()
        self.strategy = config.fusion_strategy
        self.params = ParameterStore(config.seed)
        bb.init_ann_params(self.params, self.ann)
        bb.init_snn_params(self.params, self.snn)

        size = config.image_size
        low_hw, high_hw = bb.feature_size(self.snn, size)
        ann_low, ann_high = bb.feature_size(self.ann, size)
        if (low_hw, high_hw) != (ann_low, ann_high):
            raise ValueError("ANN and SNN feature maps differ in size")
        c_fl = self.ann.low[-1].out_channels
        c_fh = self.ann.high[-1].out_channels
        c_gl = self.snn.low[-1].out_channels
        c_gh = self.snn.high[-1].out_channels
        self.high_out = (high_hw, high_hw)
        if self.strategy == "tff" and config.score_map_size:
            self.high_out = (config.score_map_size, config.score_map_size)
        fu.init_level_params(self.params.scoped("fusion_low"), self.fusion, self.strategy,
                             c_fl, c_gl, (low_hw, low_hw))
        fu.init_level_params(self.params.scoped("fusion_high"), self.fusion, self.strategy,
                             c_fh, c_gh, (high_hw, high_hw), self.high_out)
        c_low = fu.fused_channels(self.fusion, self.strategy, c_fl, c_gl)
        c_high = fu.fused_channels(self.fusion, self.strategy, c_fh, c_gh)
        hd.init_classifier_params(self.params.scoped("classifier"), c_high)
        hd.init_iou_params(self.params.scoped("iou"), c_low, c_high, config.iou_mlp_width)
        self.stride_low = size / low_hw
        self.stride_high = size / self.high_out[0]

    def is_backbone(self, name):
        return name.startswith(BACKBONE_PREFIXES)

    def features(self, sample, ctx=fu.EVAL):
        frame = Tensor(sample.frame)
        f_low, f_high = bb.ann_forward(frame, self.ann, self.params)
        low_train, high_train = bb.snn_forward(sample.slices, self.snn, self.params)
        g_low, g_high = bb.rate_code(low_train), bb.rate_code(high_train)
        t_low = fu.fuse_level(f_low, g_low, self.fusion, self.params.scoped("fusion_low"),
                              self.strategy, ctx=ctx)
        t_high = fu.fuse_level(f_high, g_high, self.fusion, self.params.scoped("fusion_high"),
                               self.strategy, self.high_out, ctx)
        return FusedFeatures(t_low, t_high, self.stride_low, self.stride_high)

    @property
    def strides(self):
        return (self.stride_low, self.stride_high)

    def classify(self, template, search, b_t):
        return hd.classify(template.high, search.high, b_t, self.params.scoped("classifier"),
                           self.stride_high)

    def predict_iou(self, template, search, b_t, candidate):
        return hd.predict_iou(search.low, search.high, template.low, template.high, b_t, candidate,
                              self.params.scoped("iou"), self.strides)

    def score_shape(self):
        return (1,) + self.high_out

    # -- training -------------------------------------------------------------

    def pair_terms(self, template_sample, search_sample, rng, ctx):
        """Score map, label, predicted IoUs and target IoUs for one template/search pair."""
        cfg = self.config
        b_t = hd.BBox(*template_sample.ground_truth_box)
        b_s = hd.BBox(*search_sample.ground_truth_box)
        tf = self.features(template_sample, ctx)
        sf = self.features(search_sample, ctx)
        score = self.classify(tf, sf, b_t)
        label = hd.gaussian_label(b_s, self.score_shape(), self.stride_high)
        cands = jitter_boxes(b_s, cfg.iou_candidates, cfg.box_jitter, rng, cfg.image_size)
        v_l, v_h = hd.modulation_vectors(tf.low, tf.high, b_t, self.strides)
        preds = [hd.predict_iou_modulated(sf.low, sf.high, v_l, v_h, c, self.params.scoped("iou"),
                                          self.strides) for c in cands]
        gts = np.array([hd.box_iou(c, b_s) for c in cands])
        return score, label, ops.concat(preds, axis=0), gts

    # -- tracking -------------------------------------------------------------

    def refine_box(self, template, search, b_t, box):
        v_l, v_h = hd.modulation_vectors(template.low, template.high, b_t, self.strides)
        cur = box.as_array()
        for _ in range(self.config.refine_steps):
            bt = Tensor(cur.copy(), requires_grad=True)
            iou = hd.predict_iou_modulated(search.low, search.high, v_l, v_h, bt,
                                           self.params.scoped("iou"), self.strides)
            iou.backward(np.ones(1))
            step = self.config.refine_rate * bt.grad * np.array([cur[2], cur[3], cur[2], cur[3]])
            cur = cur + step
            cur[2:] = np.maximum(cur[2:], 1.0)
        return hd.BBox(*cur)

    def track(self, samples, template_index=0):
        """Track through ``samples`` with a fixed first-frame template.

        The template frame itself is not scored.
        """
        b_t = hd.BBox(*samples[template_index].ground_truth_box)
        results = []
        with no_grad():
            tf = self.features(samples[template_index])
            for k, s in enumerate(samples):
                if k == template_index:
                    continue
                sf = self.features(s)
                cx, cy = hd.score_peak(self.classify(tf, sf, b_t))
                box = hd.BBox(cx, cy, b_t.w, b_t.h)
                if self.config.refine_steps:
                    with enable_grad():
                        box = self.refine_box(tf, sf, b_t, box)
                results.append(TrackResult.from_boxes(box, hd.BBox(*s.ground_truth_box)))
        return results


def jitter_boxes(box, count, scale, rng, image_size):
    """Candidate boxes around ``box``: Gaussian centre shifts, log-normal size changes."""
    out = []
    for _ in range(count):
        cx = box.cx + rng.normal(0.0, scale) * box.w
        cy = box.cy + rng.normal(0.0, scale) * box.h
        w = box.w * float(np.exp(rng.normal(0.0, scale / 2)))
        h = box.h * float(np.exp(rng.normal(0.0, scale / 2)))
        cx = float(np.clip(cx, 0.0, image_size))
        cy = float(np.clip(cy, 0.0, image_size))
        out.append(hd.BBox(cx, cy, w, h))
    return out
