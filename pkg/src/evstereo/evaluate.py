"""Evaluation and single-pair inference over EVT1 scene directories.

Inputs whose dimensions are not multiples of 16 are zero-padded for the
forward pass and the outputs cropped back, so metrics are computed at the
native resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_tensors
from .config import RunConfig
from .events import build_multi_density, pad_to_multiple
from .metrics import MetricReport, metrics
from .model import EventStereoModel
from .synth import list_scene_dirs, load_scene
from .train import build_model
from .viz import save_colormapped_png, save_disparity_binary, save_disparity_png16


def load_model(config: RunConfig, checkpoint_path) -> EventStereoModel:
    model = build_model(config, np.random.default_rng(config.seed))
    model.load_state_dict(load_tensors(checkpoint_path))
    model.eval()
    return model


def infer_pair(model: EventStereoModel, left_stack: np.ndarray,
               right_stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the model on [M,H,W] stacks; returns (disparity, log_variance)."""
    h, w = left_stack.shape[-2:]
    left_pad, _ = pad_to_multiple(left_stack)
    right_pad, _ = pad_to_multiple(right_stack)
    with ag.no_grad():
        out = model(Tensor(left_pad[None]), Tensor(right_pad[None]))
        disp = out.refined.disparity.data[0, 0, :h, :w]
        log_var = out.refined.log_variance.data[0, 0, :h, :w]
    return disp, log_var


def stacks_for_scene(scene, config: RunConfig):
    with ag.no_grad():
        left = build_multi_density(scene.left_events, config.events_per_window,
                                   config.density_scales, scene.width,
                                   scene.height).grid.data
        right = build_multi_density(scene.right_events, config.events_per_window,
                                    config.density_scales, scene.width,
                                    scene.height).grid.data
    return left, right


@dataclass
class EvaluationResult:
    per_sample: list[MetricReport]
    aggregate: MetricReport


def evaluate(model: EventStereoModel, dataset_dir, config: RunConfig,
             out_dir=None, write_images: bool = True) -> EvaluationResult:
    scene_dirs = list_scene_dirs(dataset_dir)[:: config.event_stride]
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    reports = []
    sum_abs = sum_sq = 0.0
    n_over1 = n_over2 = n_total = 0
    per_sample_lines = []
    for scene_dir in scene_dirs:
        scene = load_scene(scene_dir)
        left, right = stacks_for_scene(scene, config)
        disp, log_var = infer_pair(model, left, right)
        gt = scene.gt_disparity
        mask = np.isfinite(gt) & (gt >= 0)
        report = metrics(disp, gt, mask)
        reports.append(report)
        per_sample_lines.append(f"{scene_dir.name}: {report.to_json()}")

        err = np.abs(disp[mask] - gt[mask])
        sum_abs += err.sum()
        sum_sq += (err ** 2).sum()
        n_over1 += int((err > 1.0).sum())
        n_over2 += int((err > 2.0).sum())
        n_total += err.size

        if out_dir is not None and write_images:
            save_disparity_png16(out_dir / f"{scene_dir.name}_disp.png", disp, mask)
            save_disparity_binary(out_dir / f"{scene_dir.name}_disp.evsk", disp)
            save_colormapped_png(out_dir / f"{scene_dir.name}_disp_color.png",
                                 disp, config.max_disparity - 1)

    aggregate = MetricReport(
        mae=sum_abs / n_total,
        rmse=float(np.sqrt(sum_sq / n_total)),
        pe1_percent=100.0 * n_over1 / n_total,
        pe2_percent=100.0 * n_over2 / n_total,
        n_valid=n_total,
    )
    if out_dir is not None:
        (out_dir / "per_sample_metrics.txt").write_text(
            "\n".join(per_sample_lines) + "\n")
        (out_dir / "metrics.json").write_text(aggregate.to_json() + "\n")
        (out_dir / "metrics.txt").write_text(aggregate.to_table() + "\n")
    return EvaluationResult(per_sample=reports, aggregate=aggregate)
