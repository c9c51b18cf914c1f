"""Stripe-pattern attention.

Degradation is correlated within each H x 1 x 1 detector stripe and varies
across stripes, so the attention pools the embedding over H and produces one
weight vector per (column, channel) pair; every row of a column is rescaled
identically, which ordinary channel attention cannot express.
"""

from __future__ import annotations

import torch
from torch import nn


class SpeBlock(nn.Module):
    """Stripe-pattern enhancement: x -> Conv1x1( C1(x) * Attn ) with
    Attn = C2( AvgPool_H( C1(x) ) ) of shape (B, d_in, 1, W)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        # replicate padding: zero padding would break the rowwise-broadcast
        # property for inputs constant along H
        self.embed = nn.Sequential(
            nn.Conv2d(d_in, d_in, 3, padding=1, groups=d_in, bias=bias,
                      padding_mode="replicate"),
            nn.Conv2d(d_in, d_in, 1, bias=bias),
            nn.GELU(),
        )
        self.column_net = nn.Sequential(
            nn.Conv2d(d_in, d_in, (1, 3), padding=(0, 1), bias=bias,
                      padding_mode="replicate"),
            nn.GELU(),
            nn.Conv2d(d_in, d_in, 1, bias=bias),
        )
        self.proj = nn.Conv2d(d_in, d_out, 1, bias=bias)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """(B, d_in, 1, W) attention map; no H dimension by construction."""
        pooled = self.embed(x).mean(dim=2, keepdim=True)
        return self.column_net(pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.embed(x)
        attn = self.column_net(feat.mean(dim=2, keepdim=True))
        return self.proj(feat * attn)
