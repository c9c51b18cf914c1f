"""Windowed attention and the spatial-spectral transformer block."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .spe import SpeBlock


def _pad_to_multiple(x: torch.Tensor, multiple: int):
    h, w = x.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, (h, w)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping spatial windows.
    Inputs that do not tile evenly are reflect-padded and cropped back."""

    def __init__(self, dim: int, window: int = 8, heads: int = 2):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must divide evenly into heads")
        self.window = window
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ws = self.window
        x, (h0, w0) = _pad_to_multiple(x, ws)
        b, c, h, w = x.shape
        # partition: (B*nH*nW, ws*ws, C)
        t = x.view(b, c, h // ws, ws, w // ws, ws)
        t = t.permute(0, 2, 4, 3, 5, 1).reshape(-1, ws * ws, c)
        qkv = self.qkv(t).reshape(t.shape[0], ws * ws, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        out = attn.softmax(dim=-1) @ v
        out = out.transpose(1, 2).reshape(t.shape[0], ws * ws, c)
        out = self.proj(out)
        out = out.view(b, h // ws, w // ws, ws, ws, c)
        out = out.permute(0, 5, 1, 3, 2, 4).reshape(b, c, h, w)
        return out[:, :, :h0, :w0]


class IhrTransBlock(nn.Module):
    """Decoder block: windowed spatial attention, stripe attention, MLP,
    each behind a norm with a residual connection."""

    def __init__(self, dim: int, window: int = 8, heads: int = 2):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, dim)
        self.attn = WindowAttention(dim, window, heads)
        self.norm2 = nn.GroupNorm(1, dim)
        self.spe = SpeBlock(dim, dim)
        self.norm3 = nn.GroupNorm(1, dim)
        self.mlp = nn.Sequential(
            nn.Conv2d(dim, 2 * dim, 1),
            nn.GELU(),
            nn.Conv2d(2 * dim, dim, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.spe(self.norm2(x))
        x = x + self.mlp(self.norm3(x))
        return x
