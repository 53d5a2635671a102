"""Correlation cost volumes over a feature pyramid.

Candidate d at pyramid stride s matches left pixel (h, w) against right
pixel (h, w - d) in level coordinates, i.e. a full-resolution disparity of
d * s pixels. The per-level candidate count scales with the stride so every
level covers the same full-resolution disparity budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn_ops
from .autograd import Tensor
from .backbone import FeaturePyramid

correlate = nn_ops.correlate


@dataclass
class CostVolumePyramid:
    volumes: list[Tensor]              # [B, D_s, H_s, W_s] per level
    valid_masks: list[np.ndarray]      # matching boolean masks
    max_disparity: int
    strides: tuple[int, ...] = (4, 8, 16)

    @property
    def candidate_counts(self) -> list[int]:
        return [v.shape[1] for v in self.volumes]


def candidates_for_stride(max_disparity: int, stride: int) -> int:
    return math.ceil(max_disparity / stride)


def dump_pyramid(pyramid: CostVolumePyramid, path) -> None:
    """Write volumes to the flat binary tensor format for offline inspection."""
    from .checkpoint import save_tensors
    save_tensors(path, {
        f"volume_stride{s}": v.data
        for v, s in zip(pyramid.volumes, pyramid.strides)
    })


def build_pyramid(left: FeaturePyramid, right: FeaturePyramid,
                  max_disparity: int) -> CostVolumePyramid:
    if max_disparity < 1:
        raise ValueError(f"max disparity must be >= 1, got {max_disparity}")
    if len(left.levels) != len(right.levels):
        raise ValueError(
            f"pyramid level count mismatch: {len(left.levels)} vs {len(right.levels)}")
    volumes, masks = [], []
    for fl, fr, stride in zip(left.levels, right.levels, left.strides):
        if fl.shape != fr.shape:
            raise ValueError(
                f"level shape mismatch at stride {stride}: {fl.shape} vs {fr.shape}")
        d_s = candidates_for_stride(max_disparity, stride)
        vol, valid = correlate(fl, fr, d_s)
        volumes.append(vol)
        masks.append(valid)
    return CostVolumePyramid(volumes=volumes, valid_masks=masks,
                             max_disparity=max_disparity,
                             strides=left.strides)
