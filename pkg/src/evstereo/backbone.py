"""Shared-weight multi-scale encoder: residual stem/stages + feature pyramid.

Three residual stages take the concentrated event representation to strides
4, 8, and 16; the last stage uses deformable convolutions. A top-down FPN
with 1x1 lateral connections unifies all levels to the same channel width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn_ops
from .autograd import Tensor
from .modules import BatchNorm2d, Conv2d, DeformConv2d, Module, ModuleList

STRIDES = (4, 8, 16)


@dataclass
class FeaturePyramid:
    """Fine-to-coarse feature maps at strides 4/8/16, uniform channel width."""
    levels: list[Tensor]

    @property
    def strides(self) -> tuple[int, ...]:
        return STRIDES


class ResidualBlock(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, stride: int = 1,
                 deformable: bool = False):
        super().__init__()
        conv_cls = DeformConv2d if deformable else Conv2d
        if deformable:
            if stride != 1:
                raise ValueError("deformable residual blocks are stride-1 only")
            self.conv1 = DeformConv2d(rng, in_ch, out_ch, kernel=3, bias=False)
        else:
            self.conv1 = Conv2d(rng, in_ch, out_ch, kernel=3, stride=stride,
                                padding=1, bias=False)
        self.bn1 = BatchNorm2d(out_ch)
        if deformable:
            self.conv2 = DeformConv2d(rng, out_ch, out_ch, kernel=3, bias=False)
        else:
            self.conv2 = Conv2d(rng, out_ch, out_ch, kernel=3, padding=1,
                                bias=False)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(rng, in_ch, out_ch, kernel=1, stride=stride,
                               bias=False)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None
        del conv_cls

    def forward(self, x: Tensor) -> Tensor:
        y = ag.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ag.relu(y + skip)

    __call__ = forward


class _DownsampleDeformBlock(Module):
    """Stride-2 entry conv followed by a deformable residual block."""

    def __init__(self, rng, in_ch: int, out_ch: int):
        super().__init__()
        self.reduce = Conv2d(rng, in_ch, out_ch, kernel=3, stride=2, padding=1,
                             bias=False)
        self.reduce_bn = BatchNorm2d(out_ch)
        self.block = ResidualBlock(rng, out_ch, out_ch, deformable=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.block(ag.relu(self.reduce_bn(self.reduce(x))))

    __call__ = forward


class StereoBackbone(Module):
    """Encoder shared between the two views; no per-view parameters exist."""

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 feature_channels: int = 64,
                 stage_channels: tuple[int, int, int] = (32, 48, 64)):
        super().__init__()
        c1, c2, c3 = stage_channels
        self.stem = Conv2d(rng, in_channels, c1, kernel=3, stride=2, padding=1,
                           bias=False)
        self.stem_bn = BatchNorm2d(c1)
        self.stage1 = ModuleList([
            ResidualBlock(rng, c1, c1, stride=2),
            ResidualBlock(rng, c1, c1),
        ])
        self.stage2 = ModuleList([
            ResidualBlock(rng, c1, c2, stride=2),
            ResidualBlock(rng, c2, c2),
        ])
        self.stage3 = _DownsampleDeformBlock(rng, c2, c3)
        self.lateral = ModuleList([
            Conv2d(rng, c, feature_channels, kernel=1) for c in stage_channels
        ])
        self.smooth = ModuleList([
            Conv2d(rng, feature_channels, feature_channels, kernel=3, padding=1)
            for _ in stage_channels
        ])
        self.feature_channels = feature_channels

    def encode(self, view: Tensor) -> FeaturePyramid:
        if view.ndim != 4:
            raise ValueError(f"encode expects [B,C,H,W], got {view.shape}")
        h, w = view.shape[2:]
        if h % 16 or w % 16:
            raise ValueError(
                f"input spatial dims must be multiples of 16, got {h}x{w}")
        x = ag.relu(self.stem_bn(self.stem(view)))
        c_outs = []
        for block in self.stage1:
            x = block(x)
        c_outs.append(x)
        for block in self.stage2:
            x = block(x)
        c_outs.append(x)
        c_outs.append(self.stage3(x))

        # top-down pathway, coarse to fine
        p = self.lateral[2](c_outs[2])
        levels = [self.smooth[2](p)]
        for idx in (1, 0):
            p = self.lateral[idx](c_outs[idx]) + nn_ops.bilinear_upsample(p, 2)
            levels.append(self.smooth[idx](p))
        levels.reverse()
        return FeaturePyramid(levels=levels)

    def encode_pair(self, left: Tensor, right: Tensor
                    ) -> tuple[FeaturePyramid, FeaturePyramid]:
        if left.shape != right.shape:
            raise ValueError(
                f"stereo views must share a shape, got {left.shape} vs {right.shape}")
        return self.encode(left), self.encode(right)

    __call__ = encode
