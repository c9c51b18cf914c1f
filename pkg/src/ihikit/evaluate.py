"""Quality metrics and experiment reports."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .ihic_io import read_cube, write_array
from .synthesize import load_manifest

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(x: np.ndarray, ref: np.ndarray, peak: float | None = None) -> float:
    """10*log10(peak^2 / MSE) over all elements; +inf when x equals ref."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if peak is None:
        peak = float(ref.max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(window) - half) / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def ssim(x: np.ndarray, ref: np.ndarray, peak: float | None = None,
         window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Gaussian-windowed SSIM per channel, averaged over channels and space.

    Inputs are (H, W) or (H, W, C); statistics use valid windows only.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        ref = ref[:, :, None]
    if x.shape[0] < window or x.shape[1] < window:
        raise ValueError(f"spatial dims {x.shape[:2]} smaller than window {window}")
    if peak is None:
        peak = float(ref.max() - ref.min()) or 1.0
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    kernel = _gaussian_kernel(window, SSIM_SIGMA)

    def filt(img):
        return convolve2d(img, kernel, mode="valid")

    vals = []
    for ch in range(x.shape[2]):
        a = x[:, :, ch]
        b = ref[:, :, ch]
        mu_a = filt(a)
        mu_b = filt(b)
        var_a = filt(a * a) - mu_a**2
        var_b = filt(b * b) - mu_b**2
        cov = filt(a * b) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
            (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


@dataclass
class EvalReport:
    method: str
    config_digest: str
    scenes: list = field(default_factory=list)
    runtime_s: float = 0.0

    def add_scene(self, scene_id: str, psnr_db: float, ssim_val: float):
        self.scenes.append({
            "id": scene_id,
            "psnr_db": None if math.isinf(psnr_db) else psnr_db,
            "psnr_infinite": math.isinf(psnr_db),
            "ssim": ssim_val,
        })

    @property
    def average(self) -> dict:
        finite = [s["psnr_db"] for s in self.scenes if not s["psnr_infinite"]]
        return {
            "psnr_db": float(np.mean(finite)) if finite else None,
            "psnr_infinite_count": sum(s["psnr_infinite"] for s in self.scenes),
            "ssim": float(np.mean([s["ssim"] for s in self.scenes])) if self.scenes else None,
        }

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "config_digest": self.config_digest,
            "scenes": self.scenes,
            "average": self.average,
            "runtime_s": self.runtime_s,
        }

    def table(self) -> str:
        lines = [f"{'scene':>8s} {'PSNR(dB)':>9s} {'SSIM':>7s}"]
        for s in self.scenes:
            p = "inf" if s["psnr_infinite"] else f"{s['psnr_db']:.2f}"
            lines.append(f"{s['id']:>8s} {p:>9s} {s['ssim']:>7.4f}")
        avg = self.average
        p = f"{avg['psnr_db']:.2f}" if avg["psnr_db"] is not None else "inf"
        lines.append(f"{'avg':>8s} {p:>9s} {avg['ssim']:>7.4f}")
        return "\n".join(lines)


def config_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def evaluate_run(dataset_dir, method: str, reconstructor, extra_config: dict | None = None,
                 error_cubes_dir=None) -> EvalReport:
    """Reconstruct every test scene and score it in the wavelength domain.

    ``reconstructor(y_cube, record) -> Cube[wavelength]`` does the actual
    work; ground truth is the stored HSI patch with the photometric scale
    undone on both sides.  Writes optional per-scene absolute-error cubes.
    """
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    digest = config_digest({"method": method, "dataset": str(dataset_dir),
                            "master_seed": manifest.master_seed,
                            **(extra_config or {})})
    report = EvalReport(method=method, config_digest=digest)
    t0 = time.time()
    for rec in manifest.samples:
        if rec.split != "test":
            continue
        y = read_cube(dataset_dir / "test" / f"{rec.sample_id}.interf.ihic")
        gt = read_cube(dataset_dir / "test" / f"{rec.sample_id}.gt_hsi.ihic")
        try:
            out = reconstructor(y, rec)
        except Exception as exc:
            raise RuntimeError(f"reconstruction failed on scene {rec.sample_id}") from exc
        est = out.data / rec.scale
        truth = gt.data / rec.scale
        peak = float(truth.max())
        report.add_scene(rec.sample_id, psnr(est, truth, peak), ssim(est, truth, peak))
        if error_cubes_dir is not None:
            err_dir = Path(error_cubes_dir)
            err_dir.mkdir(parents=True, exist_ok=True)
            write_array(np.abs(est - truth), err_dir / f"{rec.sample_id}.abs_err.ihic")
    report.runtime_s = time.time() - t0
    return report
