"""The unfolding network: adaptive-momentum data modules alternating with
lightweight cross-stage prior modules around frozen physics operators."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import IhrTransBlock
from .operators import FrozenOperators
from .spe import SpeBlock


@dataclass
class NetConfig:
    stages: int = 5
    width: int = 16
    window: int = 8
    heads: int = 2
    level2_blocks: int = 2
    level1_blocks: int = 1
    widths: tuple = ()  # per-level channel counts; default uniform (width, width)

    def resolved_widths(self):
        return tuple(self.widths) if self.widths else (self.width, self.width)


class DataModule(nn.Module):
    """z_k = x_k + SPE_k( SPE_0(y)[stage] * F'(y - F x_k) + (x_k - x_{k-1}) ).

    SPE_0 maps the measurement once into one weighting channel per stage;
    the momentum term is zero at stage 0 (x_{-1} = x_0).
    """

    def __init__(self, ops: FrozenOperators, stages: int):
        super().__init__()
        self.ops = ops
        self.spe_global = SpeBlock(ops.l, stages)
        self.spe_stage = nn.ModuleList(SpeBlock(ops.n, ops.n) for _ in range(stages))

    def global_weights(self, y: torch.Tensor) -> torch.Tensor:
        return self.spe_global(y)

    def forward(self, y, x, x_prev, weights, stage: int) -> torch.Tensor:
        residual = y - self.ops.apply_forward(x)
        projection = weights[:, stage:stage + 1] * self.ops.apply_inverse(residual)
        r = projection + (x - x_prev)
        return x + self.spe_stage[stage](r)


class PriorStage(nn.Module):
    """U-shaped denoiser with uniform channel width and cross-stage fusion.

    The incoming stage feature replaces a second encoder level: it is fused
    with the downsampled features, decoded through transformer blocks, and
    the post-decode feature is handed to the next stage.
    """

    def __init__(self, channels: int, cfg: NetConfig):
        super().__init__()
        w1, w2 = cfg.resolved_widths()
        # pointwise embed/head: spatial mixing belongs to the blocks, and a
        # channel-count-independent stem keeps the width budget meaningful
        self.embed = nn.Conv2d(channels, w1, 1)
        self.down = nn.Conv2d(w1, w2, 2, stride=2)
        self.fuse = nn.Conv2d(2 * w2, w2, 1)
        self.level2 = nn.Sequential(*(IhrTransBlock(w2, cfg.window, cfg.heads)
                                      for _ in range(cfg.level2_blocks)))
        self.up = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.skip = nn.Conv2d(2 * w1, w1, 1)
        self.level1 = nn.Sequential(*(IhrTransBlock(w1, cfg.window, cfg.heads)
                                      for _ in range(cfg.level1_blocks)))
        self.out = nn.Conv2d(w1, channels, 1)

    def forward(self, z: torch.Tensor, feat_in: torch.Tensor):
        head = self.embed(z)
        down = self.down(_pad_even(head))
        fused = self.fuse(torch.cat([down, feat_in], dim=1))
        deep = self.level2(fused)
        up = self.up(deep)[:, :, :head.shape[2], :head.shape[3]]
        merged = self.skip(torch.cat([up, head], dim=1))
        decoded = self.level1(merged)
        return z + self.out(decoded), deep


def _pad_even(x: torch.Tensor) -> torch.Tensor:
    pad_h = x.shape[2] % 2
    pad_w = x.shape[3] % 2
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x


class IhrutNet(nn.Module):
    """Full K-stage unfolding reconstruction network over frozen operators."""

    def __init__(self, ops: FrozenOperators, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetConfig()
        self.ops = ops
        self.data = DataModule(ops, self.cfg.stages)
        self.priors = nn.ModuleList(PriorStage(ops.n, self.cfg)
                                    for _ in range(self.cfg.stages))

    def feat_zero(self, y: torch.Tensor) -> torch.Tensor:
        _, w2 = self.cfg.resolved_widths()
        h2 = (y.shape[2] + 1) // 2
        w_sp = (y.shape[3] + 1) // 2
        return y.new_zeros(y.shape[0], w2, h2, w_sp)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        weights = self.data.global_weights(y)
        x = self.ops.apply_inverse(y)
        x_prev = x
        feat = self.feat_zero(y)
        for k in range(self.cfg.stages):
            z = self.data(y, x, x_prev, weights, k)
            x_prev = x
            x, feat = self.priors[k](z, feat)
        return x

    def prior_only(self, z: torch.Tensor, feat: torch.Tensor | None, stage: int):
        """Single prior application for the bridge server; stage indices past
        the last module clamp to it."""
        k = min(stage, self.cfg.stages - 1)
        if feat is None:
            feat = self.feat_zero(z)
        return self.priors[k](z, feat)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
