"""End-to-end network: stacks -> features -> cost volumes -> disparity.

Training mode keeps every stage's disparity head at every pyramid level for
intermediate supervision; eval mode computes only the final path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .aggregation import CostAggregator
from .autograd import Tensor
from .backbone import STRIDES, StereoBackbone
from .costvolume import build_pyramid, candidates_for_stride
from .events import ConcentrationLayer
from .modules import Module
from .refine import (DisparityOutput, RefinementNet, cost_to_prob, soft_argmax,
                     upsample_disparity)


@dataclass
class ModelOutput:
    refined: DisparityOutput
    initial_fullres: Tensor
    # (disparity at full resolution, log-variance or None), supervision order:
    # per stage fine->coarse, then the refined output last
    supervised: list[tuple[Tensor, Optional[Tensor]]] = field(default_factory=list)


class EventStereoModel(Module):
    def __init__(self, rng: np.random.Generator, density_scales: int,
                 concentrate_channels: int, feature_channels: int,
                 max_disparity: int, stages: int = 2,
                 refine_base_channels: int = 16,
                 stage_channels: tuple[int, int, int] = (32, 48, 64)):
        super().__init__()
        self.concentrate = ConcentrationLayer(rng, density_scales,
                                              concentrate_channels)
        self.backbone = StereoBackbone(rng, concentrate_channels,
                                       feature_channels=feature_channels,
                                       stage_channels=stage_channels)
        counts = [candidates_for_stride(max_disparity, s) for s in STRIDES]
        self.aggregator = CostAggregator(rng, counts, stages=stages,
                                         strides=STRIDES)
        self.refiner = RefinementNet(rng, concentrate_channels, max_disparity,
                                     base_channels=refine_base_channels)
        self.max_disparity = max_disparity

    def forward(self, left_stack: Tensor, right_stack: Tensor) -> ModelOutput:
        left_rep = self.concentrate(left_stack)
        right_rep = self.concentrate(right_stack)
        left_pyr, right_pyr = self.backbone.encode_pair(left_rep, right_rep)
        cost = build_pyramid(left_pyr, right_pyr, self.max_disparity)
        stage_volumes = self.aggregator(cost.volumes,
                                        keep_intermediate=self.training)

        supervised: list[tuple[Tensor, Optional[Tensor]]] = []
        if self.training:
            for volumes in stage_volumes:
                for vol, stride in zip(volumes, STRIDES):
                    disp = soft_argmax(cost_to_prob(vol))
                    supervised.append((upsample_disparity(disp, stride), None))

        final_volumes = stage_volumes[-1]
        finest = soft_argmax(cost_to_prob(final_volumes[0]))
        initial_fullres = upsample_disparity(finest, STRIDES[0])
        refined = self.refiner(initial_fullres, left_rep, right_rep)
        supervised.append((refined.disparity, refined.log_variance))
        refined.per_scale = [d for d, _ in supervised[:-1]]
        return ModelOutput(refined=refined, initial_fullres=initial_fullres,
                           supervised=supervised)

    __call__ = forward


def supervision_weights(stages: int, level_weights: list[float],
                        final_weight: float) -> list[float]:
    """Expand per-level weights across stages and append the final head's."""
    if len(level_weights) != len(STRIDES):
        raise ValueError(
            f"need {len(STRIDES)} per-level weights, got {len(level_weights)}")
    return list(level_weights) * stages + [final_weight]
