"""Tracking heads and training losses.

The classifier pools a target kernel from the template inside the template
box and correlates it with the search features (depthwise product followed by
a learned 1x1 projection). The IoU predictor follows the modulation/prediction
split: vectors pooled from the template modulate features pooled from the
search map inside a candidate box, and a two-layer MLP maps the result to an
IoU estimate clamped to [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError
from .numerics import Tensor, ops
from .numerics.tensor import make_node

ZETA_THRESHOLD = 0.05


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0, y0, x1, y1):
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass
class ScoreMap:
    values: Tensor   # 1 x H_s x W_s
    stride: float


@dataclass
class GaussianLabel:
    values: np.ndarray   # 1 x H_s x W_s
    stride: float


def box_iou(a, b):
    """Exact intersection-over-union of two axis-aligned boxes."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a, b):
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


# -- labels -----------------------------------------------------------------------

def gaussian_label(box, map_shape, stride, sigma_factor=0.25):
    """Gaussian bump on the score grid centred on the box, peak normalized to 1.

    Cell (i, j) sits at pixel ((j + 0.5) * stride, (i + 0.5) * stride) and
    sigma = sigma_factor * sqrt(w * h) / stride in cell units.
    """
    hs, ws = map_shape[-2:]
    if not (0 <= box.cx < ws * stride and 0 <= box.cy < hs * stride):
        raise GeometryError(f"box centre ({box.cx:.1f}, {box.cy:.1f}) outside the {hs}x{ws} map")
    sigma = sigma_factor * math.sqrt(box.w * box.h) / stride
    gx = (np.arange(ws) + 0.5) - box.cx / stride
    gy = (np.arange(hs) + 0.5) - box.cy / stride
    d2 = gy[:, None] ** 2 + gx[None, :] ** 2
    vals = np.exp(-d2 / (2 * sigma ** 2))
    # the cell holding the centre is the nearest cell; rescale so it reads 1
    ci = min(int(box.cy // stride), hs - 1)
    cj = min(int(box.cx // stride), ws - 1)
    vals = vals / vals[ci, cj]
    return GaussianLabel(np.minimum(vals, 1.0)[None], stride)


# -- region pooling ------------------------------------------------------------------

def _as_box_tensor(box):
    if isinstance(box, Tensor):
        return box
    if isinstance(box, BBox):
        return Tensor(box.as_array())
    return Tensor(np.asarray(box, dtype=np.float64))


def roi_pool(features, box, stride, samples=4):
    """Mean of bilinearly sampled features over a samples x samples grid in the box.

    Differentiable in both the features and the box (cx, cy, w, h); samples
    falling outside the map read zero.
    """
    box = _as_box_tensor(box)
    c, h, w = features.shape
    cx, cy, bw, bh = box.data
    if not (bw > 0 and bh > 0):
        raise GeometryError("pooling box must have positive area")
    if cx + bw / 2 <= 0 or cy + bh / 2 <= 0 or cx - bw / 2 >= w * stride or cy - bh / 2 >= h * stride:
        raise GeometryError("pooling region lies entirely outside the feature map")
    rel = (np.arange(samples) + 0.5) / samples - 0.5            # offsets in box units
    rx, ry = np.meshgrid(rel, rel)
    rx, ry = rx.ravel(), ry.ravel()
    fx = (cx + rx * bw) / stride - 0.5
    fy = (cy + ry * bh) / stride - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax, ay = fx - x0, fy - y0
    fdat = features.data

    def gather(yy, xx):
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros((c, yy.size))
        vals[:, ok] = fdat[:, yy[ok], xx[ok]]
        return vals, ok

    v00, m00 = gather(y0, x0)
    v01, m01 = gather(y0, x0 + 1)
    v10, m10 = gather(y0 + 1, x0)
    v11, m11 = gather(y0 + 1, x0 + 1)
    w00, w01 = (1 - ay) * (1 - ax), (1 - ay) * ax
    w10, w11 = ay * (1 - ax), ay * ax
    vals = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11       # C x P
    n = rx.size
    out = vals.mean(axis=1)
    if not (m00 | m01 | m10 | m11).any():
        raise GeometryError("pooling region lies entirely outside the feature map")

    def backward(g):
        gf = None
        if features.requires_grad:
            gf = np.zeros_like(fdat)
            for wt, m, yy, xx in ((w00, m00, y0, x0), (w01, m01, y0, x0 + 1),
                                  (w10, m10, y0 + 1, x0), (w11, m11, y0 + 1, x0 + 1)):
                if m.any():
                    contrib = g[:, None] * (wt[m] / n)[None, :]
                    np.add.at(gf, (slice(None), yy[m], xx[m]), contrib)
        gb = None
        if box.requires_grad:
            dfx = (1 - ay) * (v01 - v00) + ay * (v11 - v10)       # C x P
            dfy = (1 - ax) * (v10 - v00) + ax * (v11 - v01)
            sx = g @ dfx / n                                     # P
            sy = g @ dfy / n
            gb = np.array([sx.sum() / stride, sy.sum() / stride,
                           (sx * rx).sum() / stride, (sy * ry).sum() / stride])
        return gf, gb

    return make_node(out, (features, box), backward)


# -- classifier ----------------------------------------------------------------------

def init_classifier_params(scope, channels):
    scope.add("proj.weight", (1, channels, 1, 1), fan_in=channels)
    scope.add("proj.bias", (1,), init="zeros")


def classify(t_h_template, t_h_search, b_t, params, stride):
    """Score map over the search grid for the target defined by ``b_t`` in the template."""
    c = t_h_template.shape[0]
    kernel = roi_pool(t_h_template, b_t, stride)
    corr = ops.mul(t_h_search, ops.reshape(kernel, (c, 1, 1)))
    score = ops.conv2d(corr, params["proj.weight"], params["proj.bias"])
    return ScoreMap(score, stride)


def score_peak(score_map, refine=True):
    """Pixel location of the score maximum, refined by a local weighted centroid."""
    v = score_map.values.data[0]
    i, j = np.unravel_index(int(np.argmax(v)), v.shape)
    y, x = float(i), float(j)
    if refine:
        i0, i1 = max(i - 1, 0), min(i + 2, v.shape[0])
        j0, j1 = max(j - 1, 0), min(j + 2, v.shape[1])
        patch = v[i0:i1, j0:j1]
        wts = np.maximum(patch - patch.min(), 0.0)
        if wts.sum() > 0:
            yy, xx = np.mgrid[i0:i1, j0:j1]
            y = float((wts * yy).sum() / wts.sum())
            x = float((wts * xx).sum() / wts.sum())
    s = score_map.stride
    return (x + 0.5) * s, (y + 0.5) * s


# -- IoU predictor ---------------------------------------------------------------------

def init_iou_params(scope, c_low, c_high, width):
    fan = c_low + c_high
    scope.add("fc1.weight", (fan, width), fan_in=fan)
    scope.add("fc1.bias", (width,), fan_in=fan)
    scope.add("fc2.weight", (width, 1), fan_in=width)
    scope.add("fc2.bias", (1,), init="const", value=0.5)


def modulation_vectors(t_l_template, t_h_template, b_t, strides):
    """Template vectors pooled inside the template box (one per level)."""
    return (roi_pool(t_l_template, b_t, strides[0]), roi_pool(t_h_template, b_t, strides[1]))


def predict_iou_modulated(t_l, t_h, v_l, v_h, b_candidate, params, strides):
    box = _as_box_tensor(b_candidate)
    if not (box.data[2] > 0 and box.data[3] > 0):
        raise GeometryError("candidate box must have positive area")
    p_l = roi_pool(t_l, box, strides[0])
    p_h = roi_pool(t_h, box, strides[1])
    feats = ops.concat([ops.mul(v_l, p_l), ops.mul(v_h, p_h)], axis=0)
    feats = ops.reshape(feats, (1, feats.shape[0]))
    hid = ops.relu(ops.linear(feats, params["fc1.weight"], params["fc1.bias"]))
    out = ops.linear(hid, params["fc2.weight"], params["fc2.bias"])
    return ops.reshape(ops.clamp(out, 0.0, 1.0), (1,))


def predict_iou(t_l, t_h, t_l_t, t_h_t, b_t, b_candidate, params, strides):
    """IoU estimate for ``b_candidate`` on the search maps, conditioned on the template."""
    v_l, v_h = modulation_vectors(t_l_t, t_h_t, b_t, strides)
    return predict_iou_modulated(t_l, t_h, v_l, v_h, b_candidate, params, strides)


# -- losses ------------------------------------------------------------------------------

def zeta(s, s_gt):
    """Classifier residual: s - s_gt on the target region, max(0, s) elsewhere."""
    return s - s_gt if s_gt > ZETA_THRESHOLD else max(0.0, s)


def zeta_tensor(scores, labels):
    """Elementwise residual on a score map; subgradient 0 at the hinge kink."""
    labels = np.asarray(labels, dtype=np.float64)
    target = labels > ZETA_THRESHOLD
    pos = scores.data > 0
    out = np.where(target, scores.data - labels, np.where(pos, scores.data, 0.0))
    mask = target | pos
    return make_node(out, (scores,), lambda g: (g * mask,))


def _values(x):
    if isinstance(x, (ScoreMap,)):
        return x.values
    if isinstance(x, GaussianLabel):
        return x.values
    return x


def loss_components(scores, labels, ious, ious_gt, beta=1.0):
    """Return (total, L_cls, L_reg) as scalar Tensors."""
    if len(scores) == 0 or len(ious) == 0:
        raise ConfigError("loss needs at least one sample")
    if len(scores) != len(labels) or len(ious) != len(ious_gt):
        raise ConfigError("score/label and IoU lists must have matching lengths")
    cls_terms = []
    for s, lab in zip(scores, labels):
        s = _values(s)
        s = s if isinstance(s, Tensor) else Tensor(s)
        z = zeta_tensor(s, _values(lab))
        cls_terms.append(ops.mean(ops.square(z)))
    reg_terms = []
    for iou, gt in zip(ious, ious_gt):
        iou = iou if isinstance(iou, Tensor) else Tensor(np.atleast_1d(iou))
        diff = ops.sub(iou, Tensor(np.broadcast_to(np.asarray(gt, dtype=np.float64), iou.shape).copy()))
        reg_terms.append(ops.mean(ops.square(diff)))
    l_cls = ops.mul(ops.sum(ops.stack(cls_terms)), 1.0 / len(cls_terms))
    l_reg = ops.mul(ops.sum(ops.stack(reg_terms)), 1.0 / len(reg_terms))
    return ops.add(ops.mul(l_cls, beta), l_reg), l_cls, l_reg


def total_loss(scores, labels, ious, ious_gt, beta=1.0):
    """beta * L_cls + L_reg as a differentiable scalar Tensor."""
    return loss_components(scores, labels, ious, ious_gt, beta)[0]
