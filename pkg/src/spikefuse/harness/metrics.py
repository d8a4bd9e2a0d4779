"""Precision / success evaluation of tracking results."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..heads import BBox, box_iou, center_error

PRECISION_THRESHOLD_PX = 20.0
OVERLAP_GRID = np.round(np.arange(101) * 0.01, 2)
PIXEL_GRID = np.arange(51, dtype=np.float64)


@dataclass
class TrackResult:
    box: BBox
    center_error: float
    iou: float

    @classmethod
    def from_boxes(cls, predicted, truth):
        return cls(predicted, center_error(predicted, truth), box_iou(predicted, truth))


@dataclass
class Metrics:
    pr: float
    sr: float
    op50: float
    op75: float
    precision_curve: np.ndarray   # rows (threshold px, fraction)
    success_curve: np.ndarray     # rows (overlap threshold, fraction)
    mean_iou: float

    def summary(self):
        return (f"PR={self.pr:.4f} SR={self.sr:.4f} OP50={self.op50:.4f} "
                f"OP75={self.op75:.4f} meanIoU={self.mean_iou:.4f}")


def success_fraction(ious, threshold):
    # ">=": a perfect overlap still counts at the 1.0 threshold
    return float(np.mean(np.asarray(ious) >= threshold - 1e-12))


def evaluate_metrics(results):
    if len(results) == 0:
        raise ValueError("no tracking results to evaluate")
    err = np.array([r.center_error for r in results], dtype=np.float64)
    ious = np.array([r.iou for r in results], dtype=np.float64)
    pr = float(np.mean(err <= PRECISION_THRESHOLD_PX))
    prec = np.array([np.mean(err <= t) for t in PIXEL_GRID])
    succ = np.array([success_fraction(ious, t) for t in OVERLAP_GRID])
    sr = float(np.trapezoid(succ, OVERLAP_GRID))
    return Metrics(pr, sr, success_fraction(ious, 0.5), success_fraction(ious, 0.75),
                   np.column_stack([PIXEL_GRID, prec]), np.column_stack([OVERLAP_GRID, succ]),
                   float(ious.mean()))


def write_curves(metrics, out_dir):
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "precision_curve.txt", metrics.precision_curve, fmt="%.4f")
    np.savetxt(out / "success_curve.txt", metrics.success_curve, fmt="%.4f")
