"""Disparity regression and warp-based local-global refinement.

Costs become a per-pixel probability distribution over candidates; the
disparity estimate is its expectation. The refinement network warps the
right-view representation toward the left by the initial disparity, runs an
encoder-decoder with a linear attention bottleneck and a dilated block, and
emits a residual disparity correction plus a per-pixel log-variance. Both
output heads are zero-initialized, so an untrained refiner returns the
initial disparity unchanged and unit variance everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from . import nn_ops
from .autograd import Tensor
from .modules import Conv2d, ConvBNReLU, Module

LOG_VAR_CLAMP = 10.0


@dataclass
class DisparityDistribution:
    probs: Tensor            # [B, D_s, H_s, W_s], sums to 1 over candidates
    candidates: np.ndarray   # disparity value of each candidate, in level pixels


@dataclass
class DisparityOutput:
    disparity: Tensor                  # [B, 1, H, W], full-resolution pixels
    log_variance: Tensor               # [B, 1, H, W]
    per_scale: list[Tensor] = field(default_factory=list)


def cost_to_prob(volume: Tensor) -> DisparityDistribution:
    """Softmax over the candidate axis, stabilized by max subtraction."""
    if volume.ndim != 4:
        raise ValueError(f"cost volume must be [B,D,H,W], got {volume.shape}")
    probs = ag.softmax(volume, axis=1)
    candidates = np.arange(volume.shape[1], dtype=np.float64)
    return DisparityDistribution(probs=probs, candidates=candidates)


def soft_argmax(dist: DisparityDistribution) -> Tensor:
    """Expected disparity: sum_d P(d) * d, in the distribution's pixel units."""
    weights = Tensor(dist.candidates.reshape(1, -1, 1, 1))
    return (dist.probs * weights).sum(axis=1, keepdims=True)


class LinearAttentionBlock(Module):
    """Global spatial attention in O(N * C^2) via a positive feature map.

    Tokens are the H*W positions. Queries and keys pass through elu(x)+1,
    and the kernel trick aggregates keys/values once:
        out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / phi(q_i)^T (sum_j phi(k_j))
    A residual connection wraps the block.
    """

    def __init__(self, rng, channels: int):
        super().__init__()
        self.q_proj = Conv2d(rng, channels, channels, kernel=1)
        self.k_proj = Conv2d(rng, channels, channels, kernel=1)
        self.v_proj = Conv2d(rng, channels, channels, kernel=1)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        n = h * w

        def tokens(t):
            return ag.transpose(ag.reshape(t, (b, c, n)), (0, 2, 1))  # [B,N,C]

        q = ag.elu(tokens(self.q_proj(x))) + 1.0
        k = ag.elu(tokens(self.k_proj(x))) + 1.0
        v = tokens(self.v_proj(x))

        kv = ag.matmul(ag.transpose(k, (0, 2, 1)), v)          # [B,C,C]
        k_sum = ag.reshape(k.sum(axis=1), (b, c, 1))           # [B,C,1]
        numer = ag.matmul(q, kv)                               # [B,N,C]
        denom = ag.matmul(q, k_sum)                            # [B,N,1]
        attended = numer / denom
        out = ag.reshape(ag.transpose(attended, (0, 2, 1)), (b, c, h, w))
        return out + x

    __call__ = forward


class DilatedBlock(Module):
    """Parallel 3x3 convolutions at dilations 1/2/4, summed."""

    def __init__(self, rng, channels: int):
        super().__init__()
        self.d1 = Conv2d(rng, channels, channels, kernel=3, padding=1, dilation=1)
        self.d2 = Conv2d(rng, channels, channels, kernel=3, padding=2, dilation=2)
        self.d4 = Conv2d(rng, channels, channels, kernel=3, padding=4, dilation=4)

    def forward(self, x: Tensor) -> Tensor:
        return ag.relu(self.d1(x) + self.d2(x) + self.d4(x))

    __call__ = forward


class RefinementNet(Module):
    """Encoder-decoder with skips, linear-attention bottleneck, dilated block.

    Inputs: the initial full-resolution disparity, the left representation,
    and the right representation (warped internally). Outputs a refined
    disparity clamped to [0, D-1] and a clamped log-variance map.
    """

    def __init__(self, rng, rep_channels: int, max_disparity: int,
                 base_channels: int = 16):
        super().__init__()
        c1 = base_channels
        c2 = base_channels + base_channels // 2
        c3 = base_channels * 2
        in_ch = 3 * rep_channels + 1
        self.enc1a = ConvBNReLU(rng, in_ch, c1)
        self.enc1b = ConvBNReLU(rng, c1, c1)
        self.enc2a = ConvBNReLU(rng, c1, c2)
        self.enc2b = ConvBNReLU(rng, c2, c2)
        self.bottleneck = ConvBNReLU(rng, c2, c3)
        self.attention = LinearAttentionBlock(rng, c3)
        self.dec2 = ConvBNReLU(rng, c3 + c2, c2)
        self.dec1 = ConvBNReLU(rng, c2 + c1, c1)
        self.dilated = DilatedBlock(rng, c1)
        self.head_disp = Conv2d(None, c1, 1, kernel=3, padding=1, zero_init=True)
        self.head_logvar = Conv2d(None, c1, 1, kernel=3, padding=1, zero_init=True)
        self.max_disparity = max_disparity

    def forward(self, initial_disp: Tensor, left_rep: Tensor,
                right_rep: Tensor) -> DisparityOutput:
        if left_rep.shape != right_rep.shape:
            raise ValueError(
                f"view representations differ: {left_rep.shape} vs {right_rep.shape}")
        if initial_disp.shape[2:] != left_rep.shape[2:]:
            raise ValueError(
                f"disparity {initial_disp.shape} does not match representation "
                f"resolution {left_rep.shape}")
        warped_right, _valid = nn_ops.grid_warp(right_rep, initial_disp)
        photometric = left_rep - warped_right
        x = ag.concat([left_rep, warped_right, photometric, initial_disp], axis=1)

        f1 = self.enc1b(self.enc1a(x))
        f2 = self.enc2b(self.enc2a(nn_ops.maxpool2d(f1, 2, 2)))
        z = self.bottleneck(nn_ops.maxpool2d(f2, 2, 2))
        z = self.attention(z)
        u2 = self.dec2(ag.concat([nn_ops.bilinear_upsample(z, 2), f2], axis=1))
        u1 = self.dec1(ag.concat([nn_ops.bilinear_upsample(u2, 2), f1], axis=1))
        feats = self.dilated(u1)

        residual = self.head_disp(feats)
        disparity = ag.clamp(initial_disp + residual, 0.0,
                             float(self.max_disparity - 1))
        log_variance = ag.clamp(self.head_logvar(feats),
                                -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
        return DisparityOutput(disparity=disparity, log_variance=log_variance)

    __call__ = forward


def upsample_disparity(disp: Tensor, factor: int) -> Tensor:
    """Upsample spatially and rescale values: disparity is measured in pixels."""
    if factor == 1:
        return disp
    return nn_ops.bilinear_upsample(disp, factor) * float(factor)
