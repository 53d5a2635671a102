"""Training: dataset assembly, Adam with decoupled weight decay, cosine LR.

The whole run is a function of (config, dataset): RNG streams are derived
from the seed, batches and augmentation draws are scripted by those streams,
and two runs with the same inputs produce byte-identical loss logs and
checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import save_tensors
from .config import RunConfig
from .events import build_multi_density, random_crop_flip
from .losses import LossConfig, total_loss
from .model import EventStereoModel, supervision_weights
from .synth import list_scene_dirs, load_scene


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Sample:
    left_stack: np.ndarray    # [M, H, W]
    right_stack: np.ndarray
    gt: np.ndarray            # [H, W]


def build_model(config: RunConfig, rng: np.random.Generator) -> EventStereoModel:
    return EventStereoModel(
        rng,
        density_scales=config.density_scales,
        concentrate_channels=config.concentrate_channels,
        feature_channels=config.feature_channels,
        max_disparity=config.max_disparity,
        stages=config.stages,
        refine_base_channels=config.refine_base_channels,
    )


def load_samples(dataset_dir, config: RunConfig) -> list[Sample]:
    """Read scenes and pre-compute their multi-density stacks."""
    samples = []
    for scene_dir in list_scene_dirs(dataset_dir):
        scene = load_scene(scene_dir)
        with ag.no_grad():
            left = build_multi_density(scene.left_events, config.events_per_window,
                                       config.density_scales, scene.width,
                                       scene.height).grid.data
            right = build_multi_density(scene.right_events, config.events_per_window,
                                        config.density_scales, scene.width,
                                        scene.height).grid.data
        samples.append(Sample(left_stack=left, right_stack=right,
                              gt=scene.gt_disparity))
    return samples


def cosine_lr(base_lr: float, iteration: int, total: int) -> float:
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * iteration / total))


class Adam:
    """Adam moments with decoupled weight decay, fixed parameter order."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _make_batch(samples: list[Sample], indices, config: RunConfig,
                aug_rng: np.random.Generator):
    lefts, rights, gts = [], [], []
    for i in indices:
        s = samples[i]
        if config.augment:
            left, right, gt = random_crop_flip(
                aug_rng, s.left_stack, s.right_stack, s.gt,
                crop=config.crop, flip_prob=config.flip_prob)
        else:
            left, right, gt = s.left_stack, s.right_stack, s.gt
        lefts.append(left)
        rights.append(right)
        gts.append(gt)
    return (Tensor(np.stack(lefts)), Tensor(np.stack(rights)),
            np.stack(gts)[:, None])


def _loss_for_batch(model: EventStereoModel, left: Tensor, right: Tensor,
                    gt: np.ndarray, config: RunConfig) -> Tensor:
    out = model(left, right)
    weights = supervision_weights(config.stages, config.scale_weights,
                                  config.final_weight)
    loss_cfg = LossConfig(alpha=config.alpha, scale_weights=weights,
                          smooth_l1_beta=config.smooth_l1_beta,
                          uncertainty=config.uncertainty)
    mask = np.isfinite(gt) & (gt >= 0)
    return total_loss(out.supervised, Tensor(gt), mask, loss_cfg)


@dataclass
class TrainResult:
    checkpoint_path: Path
    loss_csv_path: Path
    losses: list[float]


def train(config: RunConfig, dataset_dir, out_dir) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.validate()

    init_rng = np.random.default_rng(config.seed)
    batch_rng = np.random.default_rng(config.seed + 1)
    aug_rng = np.random.default_rng(config.seed + 2)

    model = build_model(config, init_rng)
    model.train()
    samples = load_samples(dataset_dir, config)
    optimizer = Adam(model.parameters(), beta1=config.adam_beta1,
                     beta2=config.adam_beta2,
                     weight_decay=config.weight_decay)

    rows = ["iteration,loss,lr"]
    losses = []
    for it in range(config.iterations):
        lr = cosine_lr(config.learning_rate, it, config.iterations)
        indices = batch_rng.integers(0, len(samples), size=config.batch_size)
        left, right, gt = _make_batch(samples, indices, config, aug_rng)
        optimizer.zero_grad()
        loss = _loss_for_batch(model, left, right, gt, config)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            _diagnose_nan(model, left, right, gt, config, it)
        ag.backward(loss)
        optimizer.step(lr)
        losses.append(loss_value)
        rows.append(f"{it},{loss_value!r},{lr!r}")

    loss_csv_path = out_dir / "loss.csv"
    loss_csv_path.write_text("\n".join(rows) + "\n")
    checkpoint_path = out_dir / "model.evsk"
    save_tensors(checkpoint_path, model.state_dict())
    return TrainResult(checkpoint_path=checkpoint_path,
                       loss_csv_path=loss_csv_path, losses=losses)


def _diagnose_nan(model, left, right, gt, config, iteration):
    """Re-run the failing forward under nan-checking to name the bad op."""
    ag.clear_tape()
    try:
        with ag.nan_check(), ag.no_grad():
            _loss_for_batch(model, left, right, gt, config)
    except ag.NonFiniteError as exc:
        raise TrainingDiverged(
            f"non-finite loss at iteration {iteration}: {exc}") from exc
    raise TrainingDiverged(
        f"non-finite loss at iteration {iteration} (op-level recheck passed; "
        f"loss overflowed in reduction)")
