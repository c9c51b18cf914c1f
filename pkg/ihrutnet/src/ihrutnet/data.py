"""Dataset access for the producer toolkit's on-disk layout.

A dataset directory holds train/test sample triplets
(NNNN.{interf,gt_nu,gt_hsi}.ihic), a manifest.json with per-sample records,
and a params/ directory carrying the degradation maps and, when exported,
the frozen operator files.  The network consumes dark-subtracted
measurements scaled by the manifest's target rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .ihic import read_array, read_cube
from .operators import FrozenOperators


@dataclass
class Sample:
    sample_id: str
    y: torch.Tensor      # (L, H, W) dark-subtracted, scaled
    gt: torch.Tensor     # (N, H, W) scaled
    split: str


class IhiDataset:
    def __init__(self, root, dtype=torch.float32):
        self.root = Path(root)
        with open(self.root / "manifest.json") as f:
            self.manifest = json.load(f)
        self.target_rate = float(self.manifest["target_rate"])
        self.dark = read_array(self.root / "params" / "D.ihic")  # (W, L)
        self.dtype = dtype
        self.samples = []
        for rec in self.manifest["samples"]:
            split = rec["split"]
            stem = self.root / split / rec["sample_id"]
            interf, _ = read_cube(f"{stem}.interf.ihic")
            gt, _ = read_cube(f"{stem}.gt_nu.ihic")
            y = (interf.astype(np.float64) - self.dark[None, :, :]) / self.target_rate
            x = gt / self.target_rate
            self.samples.append(Sample(
                sample_id=rec["sample_id"],
                y=torch.from_numpy(np.ascontiguousarray(y.transpose(2, 0, 1))).to(dtype),
                gt=torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).to(dtype),
                split=split))

    def split(self, name: str):
        return [s for s in self.samples if s.split == name]

    def operators(self, dtype=torch.float32) -> FrozenOperators:
        return FrozenOperators.load(self.root / "params", dtype=dtype)
