"""Cost-volume refinement: intra-scale and cross-scale deformable aggregation.

Every learnable branch ends in a zero-initialized convolution, so a freshly
constructed aggregator is exactly the identity map; stages only reshape the
volumes once training moves those parameters. Later stages carry one extra
deformable convolution in their intra-scale blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from . import nn_ops
from .autograd import Tensor
from .costvolume import CostVolumePyramid
from .modules import Conv2d, DeformConv2d, Module, ModuleList


@dataclass
class AggregatedPyramid:
    """Final volumes plus the per-stage pyramids kept for supervision."""
    volumes: list[Tensor]
    stage_volumes: list[list[Tensor]]


class IsaBlock(Module):
    """Residual stack of deformable 3x3 convs over one volume's (H, W)."""

    def __init__(self, rng, channels: int, depth: int = 1):
        super().__init__()
        convs = []
        for i in range(depth):
            last = i == depth - 1
            convs.append(DeformConv2d(rng, channels, channels, kernel=3,
                                      zero_init=last))
        self.convs = ModuleList(convs)

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for i, conv in enumerate(self.convs):
            y = conv(y)
            if i != len(self.convs) - 1:
                y = ag.relu(y)
        return x + y

    __call__ = forward


class _ResamplePath(Module):
    """Cross-scale branch: resample then zero-init 1x1 channel alignment."""

    def __init__(self, rng, src_channels: int, dst_channels: int,
                 src_stride: int, dst_stride: int):
        super().__init__()
        self.upsample_factor = 0
        downs = []
        if src_stride < dst_stride:           # fine -> coarse
            ratio = dst_stride // src_stride
            while ratio > 1:
                downs.append(Conv2d(rng, src_channels, src_channels, kernel=3,
                                    stride=2, padding=1))
                ratio //= 2
        else:                                  # coarse -> fine
            self.upsample_factor = src_stride // dst_stride
        self.downs = ModuleList(downs)
        self.align = Conv2d(None, src_channels, dst_channels, kernel=1,
                            zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.downs:
            x = conv(x)
        if self.upsample_factor > 1:
            x = nn_ops.bilinear_upsample(x, self.upsample_factor)
        return self.align(x)

    __call__ = forward


class CsaFusion(Module):
    """Additive all-to-all fusion of pyramid levels at matching resolutions."""

    def __init__(self, rng, candidate_counts: list[int],
                 strides: tuple[int, ...] = (4, 8, 16)):
        super().__init__()
        self.n_levels = len(candidate_counts)
        paths = []
        for dst in range(self.n_levels):
            for src in range(self.n_levels):
                if src == dst:
                    continue
                paths.append(_ResamplePath(rng, candidate_counts[src],
                                           candidate_counts[dst],
                                           strides[src], strides[dst]))
        self.paths = ModuleList(paths)

    def forward(self, volumes: list[Tensor]) -> list[Tensor]:
        if len(volumes) != self.n_levels:
            raise ValueError(
                f"expected {self.n_levels} levels, got {len(volumes)}")
        if self.n_levels == 1:
            return [volumes[0]]
        outputs = []
        k = 0
        for dst in range(self.n_levels):
            acc = volumes[dst]
            for src in range(self.n_levels):
                if src == dst:
                    continue
                acc = acc + self.paths[k](volumes[src])
                k += 1
            outputs.append(acc)
        return outputs

    __call__ = forward


class CostAggregator(Module):
    """Multi-stage ISA + CSA; keeps each stage's pyramid when asked."""

    def __init__(self, rng, candidate_counts: list[int], stages: int = 2,
                 strides: tuple[int, ...] = (4, 8, 16)):
        super().__init__()
        if stages < 1:
            raise ValueError(f"need at least one stage, got {stages}")
        isa_stages = []
        csa_stages = []
        for s in range(stages):
            isa_stages.append(ModuleList([
                IsaBlock(rng, c, depth=1 + s) for c in candidate_counts]))
            csa_stages.append(CsaFusion(rng, candidate_counts, strides))
        self.isa_stages = ModuleList(isa_stages)
        self.csa_stages = ModuleList(csa_stages)
        self.stages = stages

    def forward(self, volumes: list[Tensor],
                keep_intermediate: bool = True) -> list[list[Tensor]]:
        stage_outputs = []
        current = list(volumes)
        for isa_blocks, csa in zip(self.isa_stages, self.csa_stages):
            current = [blk(v) for blk, v in zip(isa_blocks, current)]
            current = csa(current)
            if keep_intermediate:
                stage_outputs.append(current)
        if not keep_intermediate:
            stage_outputs.append(current)
        return stage_outputs

    __call__ = forward


def aggregate(aggregator: CostAggregator, pyramid: CostVolumePyramid,
              training: bool) -> AggregatedPyramid:
    stage_volumes = aggregator(pyramid.volumes, keep_intermediate=training)
    return AggregatedPyramid(volumes=stage_volumes[-1],
                             stage_volumes=stage_volumes)
