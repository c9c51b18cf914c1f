"""Spectral/interferometric cube container and axis resampling.

A cube is an (H, W, C) array plus the axis its channel dimension lives on:
``wavelength`` for hyperspectral products, ``wavenumber`` for transform-domain
spectra, ``opd`` for interferograms.  Cubes are immutable once constructed and
every public operation keeps entries finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .profiles import InstrumentProfile

AXIS_KINDS = ("wavelength", "wavenumber", "opd")


class AxisMismatchError(ValueError):
    """Cube axis kind or channel count does not match what the operation needs."""


@dataclass(frozen=True)
class Cube:
    data: np.ndarray
    axis_kind: str
    profile: InstrumentProfile

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 3:
            raise ValueError(f"cube data must be 3-D (H, W, C), got shape {arr.shape}")
        if self.axis_kind not in AXIS_KINDS:
            raise ValueError(f"unknown axis_kind {self.axis_kind!r}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube data must be finite (no NaN/Inf)")
        expected = self.profile.channels(self.axis_kind)
        if arr.shape[2] != expected:
            raise AxisMismatchError(
                f"{self.axis_kind} cube needs {expected} channels, got {arr.shape[2]}"
            )
        if arr.base is not None:  # views keep their parent writable; detach
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def profile_ref(self) -> str:
        return self.profile.name

    def with_data(self, data: np.ndarray, axis_kind: str | None = None) -> "Cube":
        return Cube(data, axis_kind or self.axis_kind, self.profile)

    def astype(self, dtype) -> "Cube":
        return Cube(self.data.astype(dtype), self.axis_kind, self.profile)


def _require_axis(cube: Cube, axis_kind: str, op: str):
    if cube.axis_kind != axis_kind:
        raise AxisMismatchError(f"{op} expects a {axis_kind} cube, got {cube.axis_kind}")


def _interp_table(x_query: np.ndarray, x_nodes: np.ndarray):
    """Indices and weights for linear interpolation at fixed query points.

    Queries outside the node range clamp to the end values (np.interp
    behaviour).  Returns (lo, hi, t) with value = (1-t)*v[lo] + t*v[hi].
    """
    hi = np.searchsorted(x_nodes, x_query, side="left")
    hi = np.clip(hi, 1, x_nodes.size - 1)
    lo = hi - 1
    t = (x_query - x_nodes[lo]) / (x_nodes[hi] - x_nodes[lo])
    t = np.clip(t, 0.0, 1.0)
    return lo, hi, t


def resample_hsi_to_wavenumber(hsi: Cube, profile: InstrumentProfile | None = None) -> Cube:
    """Re-express a wavelength cube on the wavenumber grid (nu = 1/lambda).

    Values are linearly interpolated at nu = 1/lambda; wavenumber bins outside
    the instrument band [1/lambda_max, 1/lambda_min] are exactly zero.
    """
    profile = profile or hsi.profile
    _require_axis(hsi, "wavelength", "resample_hsi_to_wavenumber")
    nu = profile.nu_grid
    mask = profile.in_band
    lam_query = 1.0 / nu[mask]
    lo, hi, t = _interp_table(lam_query, profile.lambda_grid)

    data = hsi.data.astype(np.float64, copy=False)
    out = np.zeros(data.shape[:2] + (nu.size,), dtype=np.float64)
    out[:, :, mask] = (1.0 - t) * data[:, :, lo] + t * data[:, :, hi]
    return Cube(out, "wavenumber", profile)


def resample_wavenumber_to_hsi(spec: Cube, profile: InstrumentProfile | None = None) -> Cube:
    """Re-express a wavenumber cube on the wavelength grid (lambda = 1/nu).

    Only in-band wavenumber bins act as interpolation nodes; queries past the
    outermost in-band bin clamp to it.  Zero-filled out-of-band bins therefore
    never bleed into the band edges.
    """
    profile = profile or spec.profile
    _require_axis(spec, "wavenumber", "resample_wavenumber_to_hsi")
    idx = profile.in_band_indices
    if idx.size < 2:
        raise AxisMismatchError("profile has fewer than 2 in-band wavenumber bins")
    nu_nodes = profile.nu_grid[idx]
    nu_query = 1.0 / profile.lambda_grid[::-1]  # increasing in nu
    lo, hi, t = _interp_table(nu_query, nu_nodes)

    data = spec.data.astype(np.float64, copy=False)[:, :, idx]
    interp = (1.0 - t) * data[:, :, lo] + t * data[:, :, hi]
    return Cube(interp[:, :, ::-1], "wavelength", profile)


def column_stats(cube: Cube) -> tuple[np.ndarray, np.ndarray]:
    """Per-(W, C) mean and unbiased std over the H axis."""
    if cube.h < 2:
        raise ValueError(f"column_stats needs H >= 2, got H={cube.h}")
    data = cube.data.astype(np.float64, copy=False)
    return data.mean(axis=0), data.std(axis=0, ddof=1)


def column_mean(cube: Cube) -> np.ndarray:
    """Per-(W, C) mean over the H axis."""
    return cube.data.astype(np.float64, copy=False).mean(axis=0)


def spectral_mean(cube: Cube) -> np.ndarray:
    """Per-pixel mean over the channel axis: an (H, W) brightness map."""
    return cube.data.astype(np.float64, copy=False).mean(axis=2)
