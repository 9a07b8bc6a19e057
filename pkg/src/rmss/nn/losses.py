"""Focal Tversky loss on two-class softmax outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import softmax_probs


@dataclass
class TverskyParams:
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.75
    eps: float = 1e-7


def focal_tversky_loss(logits: np.ndarray, gt, params: TverskyParams = TverskyParams()) -> tuple:
    """Sum over both classes of ``(1 - TI_c) ** gamma``, with its gradient w.r.t. the logits.

    Column 0 is static, column 1 moving. Soft counts are pooled over all rows,
    so a batch of scans is treated as one point set.
    """
    gt = np.asarray(gt)
    if gt.size == 0 or np.any(gt < 0):
        raise ValueError("focal Tversky loss needs ground-truth labels for every point")
    probs = softmax_probs(logits)
    onehot = np.column_stack([gt == 0, gt == 1]).astype(np.float64)
    a, b, g, eps = params.alpha, params.beta, params.gamma, params.eps

    tp = (probs * onehot).sum(axis=0)
    fn = ((1.0 - probs) * onehot).sum(axis=0)
    fp = (probs * (1.0 - onehot)).sum(axis=0)
    denom = tp + a * fn + b * fp + eps
    ti = tp / denom
    one_minus = 1.0 - ti
    loss = float(np.sum(one_minus ** g))

    # d loss / d TI_c; the focal term has an infinite slope at TI = 1, treated as flat
    with np.errstate(divide="ignore", invalid="ignore"):
        d_ti = np.where(one_minus > 0, -g * one_minus ** (g - 1.0), 0.0)
    # TI = TP / (TP + a FN + b FP + eps), with FN = sum(y) - TP and FP = sum(p) - TP
    d_tp = (denom - tp * (1.0 - a - b)) / denom ** 2
    d_sum_p = -tp * b / denom ** 2
    grad_probs = d_ti * (onehot * d_tp + d_sum_p)
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    grad_logits = probs * (grad_probs - inner)
    return loss, grad_logits
