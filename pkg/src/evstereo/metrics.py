"""Disparity evaluation: MAE, RMSE, strict pixel-error rates, calibration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricReport:
    mae: float
    rmse: float
    pe1_percent: float
    pe2_percent: float
    n_valid: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def to_table(self) -> str:
        rows = [
            ("MAE (px)", f"{self.mae:.4f}"),
            ("RMSE (px)", f"{self.rmse:.4f}"),
            ("1PE (%)", f"{self.pe1_percent:.3f}"),
            ("2PE (%)", f"{self.pe2_percent:.3f}"),
            ("valid px", str(self.n_valid)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    @staticmethod
    def from_json(text: str) -> "MetricReport":
        return MetricReport(**json.loads(text))


def metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> MetricReport:
    """Error statistics over valid pixels; pixel-error rates use strict >."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mask selects no pixel; metrics undefined")
    err = np.abs(pred[mask] - gt[mask])
    return MetricReport(
        mae=float(err.mean()),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        pe1_percent=float((err > 1.0).mean() * 100.0),
        pe2_percent=float((err > 2.0).mean() * 100.0),
        n_valid=n,
    )


def sparsification_curve(pred: np.ndarray, log_var: np.ndarray,
                         gt: np.ndarray, mask: np.ndarray,
                         steps: int) -> list[tuple[float, float]]:
    """MAE after removing the highest-predicted-variance pixel fractions.

    Pixels are sorted by predicted variance, most uncertain first; the curve
    reports (fraction_removed, mae_of_remaining). A calibrated model's curve
    never rises.
    """
    if steps < 2:
        raise ValueError(f"need at least 2 steps, got {steps}")
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mask selects no pixel")
    err = np.abs(np.asarray(pred, dtype=np.float64)[mask]
                 - np.asarray(gt, dtype=np.float64)[mask])
    variance = np.asarray(log_var, dtype=np.float64)[mask]
    order = np.argsort(-variance, kind="stable")   # most uncertain first
    err_sorted = err[order]
    curve = []
    for k in range(steps):
        fraction = k / (steps - 1)
        removed = min(int(round(fraction * n)), n - 1)
        curve.append((fraction, float(err_sorted[removed:].mean())))
    return curve
