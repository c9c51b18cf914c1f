"""Paired (degraded interferogram, ground truth) dataset synthesis.

Hyperspectral source cubes are cut into grid-aligned patches, scaled to a
target photoelectron rate, resampled to the wavenumber grid, and pushed
through the calibrated degradation model.  Every sample is reproducible from
its manifest entry alone: per-sample seeds are stable hashes of the master
seed, source name and patch index, so synthesis order and parallelism cannot
change any output byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import Cube, resample_hsi_to_wavenumber
from .degrade import DegradationParams, degrade, save_params
from .ihic_io import read_cube, write_cube
from .profiles import InstrumentProfile
from .rng import RngHandle
from .transform import TransformBasis, build_basis

DEFAULT_TARGET_RATE = 1e4


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    split: str
    source: str
    patch_origin: tuple  # (row, col)
    patch_size: tuple    # (h, w)
    seed: int
    stream: int
    scale: float


@dataclass
class DatasetManifest:
    profile: dict
    params_dir: str
    master_seed: int
    target_rate: float
    samples: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "profile": self.profile,
            "params_dir": self.params_dir,
            "master_seed": self.master_seed,
            "target_rate": self.target_rate,
            "samples": [vars(s) | {"patch_origin": list(s.patch_origin),
                                   "patch_size": list(s.patch_size)} for s in self.samples],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        m = cls(profile=d["profile"], params_dir=d["params_dir"],
                master_seed=d["master_seed"], target_rate=d["target_rate"])
        for s in d["samples"]:
            m.samples.append(SampleRecord(
                sample_id=s["sample_id"], split=s["split"], source=s["source"],
                patch_origin=tuple(s["patch_origin"]), patch_size=tuple(s["patch_size"]),
                seed=s["seed"], stream=s["stream"], scale=s["scale"]))
        return m


def make_patches(hsi: Cube, patch_h: int, patch_w: int, stride: int):
    """Grid-aligned full patches in row-major origin order; no partials."""
    if patch_h < 1 or patch_w < 1 or stride < 1:
        raise ValueError("patch dims and stride must be positive")
    if patch_h > hsi.h or patch_w > hsi.w:
        raise ValueError(f"patch {patch_h}x{patch_w} exceeds image {hsi.h}x{hsi.w}")
    out = []
    for r0 in range(0, hsi.h - patch_h + 1, stride):
        for c0 in range(0, hsi.w - patch_w + 1, stride):
            out.append(((r0, c0), Cube(hsi.data[r0:r0 + patch_h, c0:c0 + patch_w, :],
                                       hsi.axis_kind, hsi.profile)))
    return out


def photometric_scale(hsi_patch: Cube, target_rate: float = DEFAULT_TARGET_RATE):
    """Scale a reflectance-like patch so its in-band wavenumber mean hits the
    target photoelectron rate; returns (scaled patch, factor)."""
    if np.any(hsi_patch.data < 0):
        raise ValueError("patch must be non-negative")
    spec = resample_hsi_to_wavenumber(hsi_patch)
    mean_rate = spec.data[:, :, hsi_patch.profile.in_band].mean()
    if mean_rate <= 0:
        raise ValueError("all-zero patch cannot be scaled to a target rate")
    factor = target_rate / mean_rate
    return hsi_patch.with_data(hsi_patch.data * factor), factor


def synthesize_pair(hsi_patch: Cube, params: DegradationParams, seed: int,
                    stream: int = 0, target_rate: float = DEFAULT_TARGET_RATE,
                    basis: TransformBasis | None = None):
    """One dataset sample: (degraded interferogram, ground-truth wavenumber
    cube, scaled HSI patch, scale factor)."""
    scaled, factor = photometric_scale(hsi_patch, target_rate)
    b0 = resample_hsi_to_wavenumber(scaled)
    i_d = degrade(b0, params, RngHandle(seed, stream), basis=basis)
    return i_d, b0, scaled, factor


def sample_seed(master_seed: int, source: str, patch_index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}|{source}|{patch_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_dataset(source_dir, params: DegradationParams, out_dir,
                 patch: int = 32, stride: int = 32, per_image_cap: int = 64,
                 test_hold_out: int = 1, master_seed: int = 0,
                 target_rate: float = DEFAULT_TARGET_RATE) -> DatasetManifest:
    """Split sources, patch the train split, keep test scenes whole, degrade
    everything, and write the dataset directory with its manifest."""
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    sources = sorted(p for p in source_dir.glob("*.ihic"))
    if not sources:
        raise FileNotFoundError(f"no .ihic source cubes in {source_dir}")
    if not (0 <= test_hold_out < len(sources)):
        raise ValueError("test_hold_out must leave at least one training source")

    basis = build_basis(params.profile)
    test_sources = sources[-test_hold_out:] if test_hold_out else []
    train_sources = sources[:len(sources) - test_hold_out]

    (out_dir / "train").mkdir(parents=True, exist_ok=True)
    (out_dir / "test").mkdir(parents=True, exist_ok=True)
    save_params(params, out_dir / "params")

    manifest = DatasetManifest(profile=params.profile.to_dict(),
                               params_dir="params", master_seed=master_seed,
                               target_rate=target_rate)

    def emit(split: str, index: int, record_source: str, origin, cube: Cube):
        seed = sample_seed(master_seed, record_source, index)
        pw = cube.w
        col0 = origin[1]
        p = params if pw == params.w else params.slice_columns(col0, col0 + pw)
        i_d, b0, scaled, factor = synthesize_pair(cube, p, seed, target_rate=target_rate,
                                                  basis=basis)
        sid = f"{index:04d}"
        write_cube(i_d.astype(np.float32), out_dir / split / f"{sid}.interf.ihic")
        write_cube(b0, out_dir / split / f"{sid}.gt_nu.ihic")
        write_cube(scaled, out_dir / split / f"{sid}.gt_hsi.ihic")
        manifest.samples.append(SampleRecord(
            sample_id=sid, split=split, source=record_source,
            patch_origin=tuple(origin), patch_size=(cube.h, cube.w),
            seed=seed, stream=0, scale=factor))

    index = 0
    for src in train_sources:
        hsi = read_cube(src)
        patches = make_patches(hsi, min(patch, hsi.h), min(patch, hsi.w), stride)
        for origin, cube in patches[:per_image_cap]:
            emit("train", index, src.name, origin, cube)
            index += 1
    for src in test_sources:
        hsi = read_cube(src)
        emit("test", index, src.name, (0, 0), hsi)
        index += 1

    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest.to_json(), f, indent=1)
    return manifest


def load_manifest(dataset_dir) -> DatasetManifest:
    with open(Path(dataset_dir) / "manifest.json") as f:
        return DatasetManifest.from_json(json.load(f))


def smooth_scene(profile: InstrumentProfile, h: int, w: int, seed: int = 0) -> Cube:
    """Spatially and spectrally gentle scene (low-order polynomial spectra).

    Its wavelength<->wavenumber representation error is negligible, so
    reconstruction experiments on it measure the numerical chain rather than
    resampling loss.
    """
    gen = RngHandle(seed, 98).generator()
    lam = profile.lambda_grid
    t = (lam - lam[0]) / (lam[-1] - lam[0])
    yy, xx = np.mgrid[0:h, 0:w]
    u = xx / max(w - 1, 1)
    v = yy / max(h - 1, 1)
    a = 0.4 + 0.2 * np.sin(2 * np.pi * (0.7 * u + 0.4 * v + gen.uniform(0, 1)))
    b = 0.3 * np.cos(2 * np.pi * (0.5 * u - 0.6 * v + gen.uniform(0, 1)))
    c = 0.15 * np.sin(2 * np.pi * (0.3 * u + 0.8 * v + gen.uniform(0, 1)))
    scene = a[:, :, None] + b[:, :, None] * t[None, None, :] + c[:, :, None] * t[None, None, :] ** 2
    return Cube(np.clip(scene, 0.05, None), "wavelength", profile)


def toy_scene(profile: InstrumentProfile, h: int, w: int, seed: int = 0) -> Cube:
    """Piecewise-smooth synthetic reflectance scene for demos and tests:
    smooth spectral gradients plus sharp-edged rectangles (structure that a
    spatial prior can exploit)."""
    gen = RngHandle(seed, 99).generator()
    lam = profile.lambda_grid
    t = (lam - lam[0]) / (lam[-1] - lam[0])
    base = 0.25 + 0.15 * np.sin(2 * np.pi * (t[None, None, :] + gen.uniform(0, 1)))
    yy, xx = np.mgrid[0:h, 0:w]
    scene = np.broadcast_to(base, (h, w, lam.size)).copy()
    ramp = 0.3 * (xx / max(w - 1, 1) + yy / max(h - 1, 1))[:, :, None]
    scene += ramp * (0.5 + 0.5 * t[None, None, :])
    for _ in range(6):
        r0, c0 = gen.integers(0, h), gen.integers(0, w)
        rh = int(gen.integers(h // 6 + 1, h // 2 + 2))
        rw = int(gen.integers(w // 6 + 1, w // 2 + 2))
        spec = 0.2 + 0.6 * gen.random() * (0.4 + 0.6 * np.sin(np.pi * (t + gen.uniform(0, 1))) ** 2)
        mask = (yy >= r0) & (yy < r0 + rh) & (xx >= c0) & (xx < c0 + rw)
        scene[mask] = 0.55 * scene[mask] + 0.45 * spec[None, :]
    return Cube(np.clip(scene, 0.01, None), "wavelength", profile)
