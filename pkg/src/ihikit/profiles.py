"""Sampling grids of the imaging instrument.

A profile ties together the three axes a cube can live on: the wavelength
grid of the hyperspectral product, the wavenumber grid of the spectral
transform, and the optical-path-difference (OPD) grid of the interferogram.
The grids are not independent: the wavenumber count equals the number of
OPD samples past the zero-OPD index, and the OPD step is close to the
Nyquist step 1/(2 nu_max).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NYQUIST_LOW = 0.99
NYQUIST_HIGH = 1.0


class ProfileError(ValueError):
    """A constructed profile violates one of the grid consistency relations."""


@dataclass(frozen=True)
class InstrumentProfile:
    """Immutable bundle of instrument sampling grids.

    lambda_grid is in nm, nu_grid in 1/nm, opd_grid in nm.  The wavenumber
    grid is uniform from zero: nu_j = j * delta_nu.  The OPD grid is uniform
    with a zero crossing at ``center``: l_i = (i - center) * delta_l.
    """

    name: str
    h: int
    w: int
    lambda_grid: np.ndarray
    nu_grid: np.ndarray
    opd_grid: np.ndarray
    center: int
    delta_l: float
    delta_nu: float
    in_band: np.ndarray = field(repr=False, default=None)  # bool mask over nu_grid

    def __post_init__(self):
        lam = np.asarray(self.lambda_grid, dtype=np.float64)
        nu = np.asarray(self.nu_grid, dtype=np.float64)
        opd = np.asarray(self.opd_grid, dtype=np.float64)
        for arr in (lam, nu, opd):
            arr.setflags(write=False)
        object.__setattr__(self, "lambda_grid", lam)
        object.__setattr__(self, "nu_grid", nu)
        object.__setattr__(self, "opd_grid", opd)

        if self.h < 1 or self.w < 1:
            raise ProfileError("H and W must be positive")
        if np.any(np.diff(lam) <= 0):
            raise ProfileError("lambda_grid must be strictly increasing")
        if np.any(np.diff(opd) <= 0):
            raise ProfileError("opd_grid must be strictly increasing")
        if not (0 <= self.center < opd.size):
            raise ProfileError("center index outside the OPD grid")
        if opd[self.center] != 0.0:
            raise ProfileError("opd_grid must be zero at the center index")
        if nu.size != opd.size - self.center:
            raise ProfileError(
                f"wavenumber count {nu.size} != L - c = {opd.size - self.center}"
            )
        nyq = 2.0 * self.delta_l * float(nu[-1])
        if not (NYQUIST_LOW <= nyq <= NYQUIST_HIGH):
            raise ProfileError(f"Nyquist product 2*dl*nu_max = {nyq:.5f} outside [0.99, 1.0]")

        band_lo = 1.0 / lam[-1]
        band_hi = 1.0 / lam[0]
        mask = (nu >= band_lo) & (nu <= band_hi)
        mask.setflags(write=False)
        object.__setattr__(self, "in_band", mask)

    @property
    def num_lambda(self) -> int:
        return int(self.lambda_grid.size)

    @property
    def num_nu(self) -> int:
        return int(self.nu_grid.size)

    @property
    def num_opd(self) -> int:
        return int(self.opd_grid.size)

    def channels(self, axis_kind: str) -> int:
        """Channel count of a cube on the given axis."""
        try:
            return {
                "wavelength": self.num_lambda,
                "wavenumber": self.num_nu,
                "opd": self.num_opd,
            }[axis_kind]
        except KeyError:
            raise ValueError(f"unknown axis_kind {axis_kind!r}") from None

    @property
    def in_band_indices(self) -> np.ndarray:
        return np.flatnonzero(self.in_band)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "H": self.h,
            "W": self.w,
            "lambda_nm": self.lambda_grid.tolist(),
            "nu_per_nm": self.nu_grid.tolist(),
            "opd_nm": self.opd_grid.tolist(),
            "center_index": self.center,
            "delta_l_nm": self.delta_l,
            "delta_nu_per_nm": self.delta_nu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstrumentProfile":
        return cls(
            name=d.get("name", "custom"),
            h=int(d["H"]),
            w=int(d["W"]),
            lambda_grid=np.asarray(d["lambda_nm"], dtype=np.float64),
            nu_grid=np.asarray(d["nu_per_nm"], dtype=np.float64),
            opd_grid=np.asarray(d["opd_nm"], dtype=np.float64),
            center=int(d["center_index"]),
            delta_l=float(d["delta_l_nm"]),
            delta_nu=float(d["delta_nu_per_nm"]),
        )


def _make_profile(name, h, w, num_lambda, lam_start, lam_step, num_opd, center,
                  nu_max, delta_l) -> InstrumentProfile:
    num_nu = num_opd - center
    delta_nu = nu_max / (num_nu - 1)
    lam = lam_start + lam_step * np.arange(num_lambda, dtype=np.float64)
    nu = delta_nu * np.arange(num_nu, dtype=np.float64)
    opd = delta_l * (np.arange(num_opd, dtype=np.float64) - center)
    return InstrumentProfile(
        name=name, h=h, w=w, lambda_grid=lam, nu_grid=nu, opd_grid=opd,
        center=center, delta_l=delta_l, delta_nu=delta_nu,
    )


def standard_profile(h: int = 120) -> InstrumentProfile:
    """Full-scale scanning-spectrometer grids: 2048 columns, 256 OPD samples
    with zero OPD at index 35, 221 wavenumbers up to 0.0034 1/nm, and 70
    wavelength channels over 450..900 nm.  H is whatever the capture used.
    """
    return _make_profile(
        "standard", h=h, w=2048,
        num_lambda=70, lam_start=450.0, lam_step=6.52,
        num_opd=256, center=35, nu_max=0.0034, delta_l=146.88,
    )


def desk_profile(h: int = 32) -> InstrumentProfile:
    """Scaled-down profile for tests and experiments on a single core.

    Same spectral band and Nyquist relation as the standard profile; the OPD
    step is 1/(2 nu_max) rounded down to keep 2*dl*nu_max inside [0.99, 1.0].
    """
    return _make_profile(
        "desk", h=h, w=64,
        num_lambda=16, lam_start=450.0, lam_step=30.0,
        num_opd=64, center=9, nu_max=0.0034, delta_l=147.0,
    )


_FACTORIES = {"standard": standard_profile, "desk": desk_profile}


def profile_by_name(name: str, h: int | None = None) -> InstrumentProfile:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(_FACTORIES)}") from None
    return factory() if h is None else factory(h)
