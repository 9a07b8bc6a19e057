"""IoU metrics, label-fraction splits and prediction helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RadarScan


@dataclass
class IoUAccumulator:
    """Pooled per-class TP/FP/FN counts across scans."""

    tp_moving: int = 0
    fp_moving: int = 0
    fn_moving: int = 0
    tp_static: int = 0
    fp_static: int = 0
    fn_static: int = 0

    def add(self, pred, gt) -> None:
        pred = np.asarray(pred, bool)
        gt = np.asarray(gt, bool)
        if pred.shape != gt.shape:
            raise ValueError("prediction and ground truth differ in length")
        self.tp_moving += int(np.sum(pred & gt))
        self.fp_moving += int(np.sum(pred & ~gt))
        self.fn_moving += int(np.sum(~pred & gt))
        self.tp_static += int(np.sum(~pred & ~gt))
        self.fp_static += int(np.sum(~pred & gt))
        self.fn_static += int(np.sum(pred & ~gt))

    def result(self) -> tuple:
        moving = _ratio(self.tp_moving, self.fp_moving, self.fn_moving)
        static = _ratio(self.tp_static, self.fp_static, self.fn_static)
        return moving, static, (moving + static) / 2.0


def _ratio(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    # an absent class that is also never predicted counts as perfect
    return 1.0 if denom == 0 else tp / denom


def iou(pred, gt) -> tuple:
    """``(iou_moving, iou_static, mean_iou)`` for one pair of masks."""
    acc = IoUAccumulator()
    acc.add(pred, gt)
    return acc.result()


def label_fraction_split(items, fraction: float, seed: int = 0) -> tuple:
    """Seeded sample of ``ceil(fraction * M)`` items plus the remainder.

    The permutation depends only on ``seed`` and ``M``, so smaller fractions
    are always subsets of larger ones.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    items = list(items)
    m = len(items)
    n = min(m, math.ceil(round(fraction * m, 9)))
    order = np.random.default_rng(np.random.SeedSequence([seed, m])).permutation(m)
    chosen = np.sort(order[:n])
    rest = np.sort(order[n:])
    return [items[i] for i in chosen], [items[i] for i in rest]


def gt_mask(scan: RadarScan) -> np.ndarray:
    if not scan.has_labels and scan.n_points:
        raise ValueError(f"scan {scan.seq_id}/{scan.frame_idx} lacks ground-truth labels")
    return scan.gt_label == 1
