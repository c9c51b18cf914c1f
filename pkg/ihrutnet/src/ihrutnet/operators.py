"""Frozen per-column forward/inverse operators, loaded from the exporter's
file handoff and never re-derived, so both sides share one exact operator."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .ihic import read_array


class FrozenOperators:
    """Dense per-column matrices: forward (W, L, N), inverse (W, N, L).

    Tensors are laid out channel-first: spectra (B, N, H, W), interferograms
    (B, L, H, W); the channel map is applied per detector column w.
    """

    def __init__(self, forward: torch.Tensor, inverse: torch.Tensor, meta: dict):
        self.fwd = forward
        self.inv = inverse
        self.meta = meta
        self.w, self.l, self.n = forward.shape

    @classmethod
    def load(cls, directory, dtype=torch.float32) -> "FrozenOperators":
        directory = Path(directory)
        fwd = torch.from_numpy(read_array(directory / "forward.ihic")).to(dtype)
        inv = torch.from_numpy(read_array(directory / "inverse.ihic")).to(dtype)
        with open(directory / "operators.json") as f:
            meta = json.load(f)
        return cls(fwd, inv, meta)

    def to(self, dtype) -> "FrozenOperators":
        return FrozenOperators(self.fwd.to(dtype), self.inv.to(dtype), self.meta)

    def apply_forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.n:
            raise ValueError(f"expected {self.n} spectral channels, got {x.shape[1]}")
        return torch.einsum("wln,bnhw->blhw", self.fwd, x)

    def apply_inverse(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[1] != self.l:
            raise ValueError(f"expected {self.l} interferogram channels, got {y.shape[1]}")
        return torch.einsum("wnl,blhw->bnhw", self.inv, y)
