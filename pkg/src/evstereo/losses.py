"""Training objectives: smooth-L1, variance-weighted regression, multi-scale sum.

The uncertainty term follows the Gaussian-matching view of regression: the
network predicts a mean and a log-variance per pixel, the robust residual is
divided by the variance, and a log-variance penalty (weight alpha) stops the
variance from growing without bound. With log-variance fixed at zero the
loss reduces exactly to the mean smooth-L1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor


@dataclass
class LossConfig:
    alpha: float = 2.0
    scale_weights: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0])
    smooth_l1_beta: float = 1.0
    uncertainty: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if any(w < 0 for w in self.scale_weights):
            raise ValueError("scale weights must be non-negative")


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Per-element smooth-L1: quadratic inside |r| < beta, linear outside."""
    if beta <= 0:
        raise ValueError(f"smooth-L1 beta must be positive, got {beta}")
    pred, target = as_tensor(pred), as_tensor(target)
    r = pred - target
    a = ag.abs_(r)
    quad = (r * r) * (0.5 / beta)
    lin = a - 0.5 * beta
    return ag.where(a.data < beta, quad, lin)


def _masked_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    count = int(mask.sum())
    if count == 0:
        raise ValueError("mask selects no pixel; mean undefined")
    return (values * mask.astype(values.dtype)).sum() / float(count)


def kl_uncertainty_loss(pred_disp, log_var, gt, mask: np.ndarray,
                        alpha: float = 2.0, beta: float = 1.0) -> Tensor:
    """Mean over valid pixels of SmoothL1(pred, gt) / sigma^2 + alpha log sigma^2."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    pred_disp, log_var, gt = as_tensor(pred_disp), as_tensor(log_var), as_tensor(gt)
    if pred_disp.shape != gt.shape or pred_disp.shape != log_var.shape:
        raise ValueError(
            f"shape mismatch: pred {pred_disp.shape}, log_var {log_var.shape}, "
            f"gt {gt.shape}")
    mask = np.asarray(mask, dtype=bool)
    per_pixel = smooth_l1(pred_disp, gt, beta) * ag.exp(-log_var) \
        + alpha * log_var
    return _masked_mean(per_pixel, mask)


def smooth_l1_masked(pred, gt, mask: np.ndarray, beta: float = 1.0) -> Tensor:
    return _masked_mean(smooth_l1(pred, gt, beta), np.asarray(mask, dtype=bool))


def total_loss(outputs: Sequence[tuple[Tensor, Optional[Tensor]]], gt,
               mask: np.ndarray, config: LossConfig) -> Tensor:
    """Weighted sum over supervised outputs, all at ground-truth resolution.

    Each output is (disparity, log_variance or None). Outputs without a
    variance head use plain smooth-L1; outputs with one use the
    uncertainty-weighted loss (unless uncertainty is disabled in config).
    """
    if len(outputs) != len(config.scale_weights):
        raise ValueError(
            f"{len(outputs)} supervised outputs but {len(config.scale_weights)} weights")
    gt = as_tensor(gt)
    total = None
    for (disp, log_var), weight in zip(outputs, config.scale_weights):
        if disp.shape != gt.shape:
            raise ValueError(
                f"supervised output {disp.shape} not at ground-truth "
                f"resolution {gt.shape}; resize it first")
        if log_var is not None and config.uncertainty:
            term = kl_uncertainty_loss(disp, log_var, gt, mask,
                                       alpha=config.alpha,
                                       beta=config.smooth_l1_beta)
        else:
            term = smooth_l1_masked(disp, gt, mask, beta=config.smooth_l1_beta)
        term = term * weight
        total = term if total is None else total + term
    return total


def gaussian_kl_divergence(mean_p: float, var_p: float,
                           mean_q: float, var_q: float) -> float:
    """Closed-form KL(P || Q) between two univariate Gaussians."""
    if var_p <= 0 or var_q <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * (math.log(var_q / var_p)
                  + (var_p + (mean_p - mean_q) ** 2) / var_q
                  - 1.0)
