"""Two-stage degradation simulator: optics, then electronics.

Optical stage (deterministic): the interferogram of the response-weighted
spectrum, plus a background proportional to the pixel's mean spectral
brightness, both shaped by the relative response map:

    I_O = M * (interferogram(A * B0) + beta * mean_N(B0))

Electronic stage (stochastic): photoelectron counting with shot noise,
system gain, dark current, and per-element readout noise:

    I_d = K' * Poisson(max(I_O, 0)) + D' + Normal(0, sigma_read')

where (K', D', sigma_read') are the base maps scaled by one log-normal
electronic gain draw per scene.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cube import Cube, spectral_mean
from .ihic_io import read_array, write_array
from .profiles import InstrumentProfile, profile_by_name
from .rng import RngHandle
from .transform import TransformBasis, apply_interferogram_transform

# Poisson sampling switches from CDF inversion to a rounded-normal
# approximation at this rate; interferogram rates are far above it and the
# approximation error is negligible against readout noise.
POISSON_EXACT_MAX = 50.0

_STREAM_GAIN = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class DegradationParams:
    """Full parameter set of the degradation model for one instrument state.

    a: complex (W, N) absolute response; beta, m, k, d, sigma_read: (W, L)
    maps; e: scalar log-std of the per-scene electronic gain.
    """

    a: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    k: np.ndarray
    d: np.ndarray
    sigma_read: np.ndarray
    e: float
    profile: InstrumentProfile

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.complex128)
        object.__setattr__(self, "a", a)
        maps = {}
        for name in ("beta", "m", "k", "d", "sigma_read"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            maps[name] = arr
        w = a.shape[0]
        n = self.profile.num_nu
        l = self.profile.num_opd
        if a.shape != (w, n):
            raise ValueError(f"A must be (W, N) = ({w}, {n}), got {a.shape}")
        for name, arr in maps.items():
            if arr.shape != (w, l):
                raise ValueError(f"{name} must be (W, L) = ({w}, {l}), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if not np.all(np.isfinite(a)):
            raise ValueError("A must be finite")
        if np.any(self.k <= 0):
            raise ValueError("K must be strictly positive")
        if np.any(self.sigma_read < 0):
            raise ValueError("sigma_read must be non-negative")
        if self.e < 0:
            raise ValueError("e must be non-negative")
        if np.any(np.abs(a[:, self.profile.in_band]) <= 0):
            raise ValueError("A must be nonzero on in-band bins for every column")

    @property
    def w(self) -> int:
        return self.a.shape[0]

    def slice_columns(self, w0: int, w1: int) -> "DegradationParams":
        """Parameter subset for detector columns [w0, w1); used when degrading
        image patches narrower than the full frame."""
        return replace(
            self,
            a=self.a[w0:w1],
            beta=self.beta[w0:w1],
            m=self.m[w0:w1],
            k=self.k[w0:w1],
            d=self.d[w0:w1],
            sigma_read=self.sigma_read[w0:w1],
        )


def optical_degrade(b0: Cube, params: DegradationParams,
                    basis: TransformBasis | None = None) -> Cube:
    if np.any(b0.data < 0):
        raise ValueError("optical input spectrum must be non-negative")
    interf = apply_interferogram_transform(b0, params.a, basis)
    background = params.beta[None, :, :] * spectral_mean(b0)[:, :, None]
    return Cube(params.m[None, :, :] * (interf.data + background), "opd", b0.profile)


def sample_electronic_gain(params: DegradationParams, rng: RngHandle):
    """One log-normal gain draw per scene; scales K, D and sigma_read jointly."""
    if params.e == 0.0:
        e_prime = 1.0
    else:
        e_prime = float(np.exp(params.e * rng.generator().standard_normal()))
    return e_prime * params.k, e_prime * params.d, e_prime * params.sigma_read, e_prime


def _poisson_hybrid(rates: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Poisson sample per element: CDF inversion below POISSON_EXACT_MAX,
    rounded clamped normal above.

    One normal and one uniform are consumed per element regardless of the
    branch, so a change to one element's rate never shifts any other
    element's draw.
    """
    normals = gen.standard_normal(rates.shape)
    uniforms = gen.random(rates.shape)
    out = np.zeros(rates.shape, dtype=np.float64)

    big = rates >= POISSON_EXACT_MAX
    if np.any(big):
        lam = rates[big]
        out[big] = np.maximum(np.rint(lam + np.sqrt(lam) * normals[big]), 0.0)

    small = ~big
    if np.any(small):
        lam = rates[small]
        u = uniforms[small]
        k = np.zeros(lam.shape, dtype=np.float64)
        pmf = np.exp(-lam)
        cdf = pmf.copy()
        active = u > cdf
        # bounded walk: for lam < 50 the CDF reaches any realistic u fast
        for step in range(1, 200):
            if not np.any(active):
                break
            pmf[active] *= lam[active] / step
            cdf[active] += pmf[active]
            k[active] = step
            active = active & (u > cdf)
        out[small] = k
    return out


def electronic_degrade(i_o: Cube, k_prime: np.ndarray, d_prime: np.ndarray,
                       sigma_prime: np.ndarray, rng: RngHandle,
                       deterministic: bool = False) -> Cube:
    """Shot noise, gain, dark current and readout noise on an optical cube.

    Negative optical intensities are clamped to zero as Poisson rates.  With
    ``deterministic=True`` the Poisson draw is replaced by its mean and the
    readout noise is skipped; that mode exists for composition tests only.
    """
    rates = np.maximum(i_o.data.astype(np.float64, copy=False), 0.0)
    if deterministic:
        counts = rates
        read = 0.0
    else:
        gen = rng.generator()
        counts = _poisson_hybrid(rates, gen)
        read = sigma_prime[None, :, :] * gen.standard_normal(rates.shape)
    out = k_prime[None, :, :] * counts + d_prime[None, :, :] + read
    return Cube(out, "opd", i_o.profile)


def degrade(b0: Cube, params: DegradationParams, rng: RngHandle,
            deterministic: bool = False,
            basis: TransformBasis | None = None) -> Cube:
    """Full degradation pipeline; one electronic gain draw per call."""
    i_o = optical_degrade(b0, params, basis)
    if deterministic:
        return electronic_degrade(i_o, params.k, params.d, params.sigma_read,
                                  rng, deterministic=True)
    k_p, d_p, s_p, _ = sample_electronic_gain(params, rng.child(_STREAM_GAIN))
    return electronic_degrade(i_o, k_p, d_p, s_p, rng.child(_STREAM_NOISE))


# ---------------------------------------------------------------------------
# persistence

_MAP_FILES = ("beta", "m", "k", "d", "sigma_read")


def save_params(params: DegradationParams, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_array(params.a.real, directory / "A_real.ihic")
    write_array(params.a.imag, directory / "A_imag.ihic")
    for name in _MAP_FILES:
        write_array(getattr(params, name), directory / f"{name.upper() if len(name) == 1 else name}.ihic")
    meta = {"e": params.e, "profile": params.profile.to_dict(), "version": 1}
    with open(directory / "params.json", "w") as f:
        json.dump(meta, f)


def load_params(directory) -> DegradationParams:
    directory = Path(directory)
    with open(directory / "params.json") as f:
        meta = json.load(f)
    profile = InstrumentProfile.from_dict(meta["profile"])
    a = read_array(directory / "A_real.ihic") + 1j * read_array(directory / "A_imag.ihic")
    maps = {name: read_array(directory / f"{name.upper() if len(name) == 1 else name}.ihic")
            for name in _MAP_FILES}
    return DegradationParams(a=a, e=float(meta["e"]), profile=profile, **maps)


# ---------------------------------------------------------------------------
# synthetic instrument states

def demo_instrument(profile: InstrumentProfile | str, seed: int = 0,
                    e: float = 0.05, w: int | None = None,
                    k_mean: float = 1.5):
    """A plausible synthetic instrument state for tests and demos.

    Returns (params, extras) where extras carries the split of the relative
    response into the sensor part ``m_r`` and the smooth scan envelope
    ``m_a`` (their normalized product is ``params.m``); capture synthesis
    needs the split because interferometer-removed captures only see m_r.

    Design constraints baked in: the response has a mild phase error; the
    background coefficient scales with N so interferogram troughs stay
    non-negative for natural scenes, and is constant along OPD because a
    background L-profile is indistinguishable from the scan envelope in
    calibration data.
    """
    if isinstance(profile, str):
        profile = profile_by_name(profile)
    w = w or profile.w
    n, l = profile.num_nu, profile.num_opd
    gen = RngHandle(seed, 77).generator()

    def smooth(shape, amp, periods=3.0):
        t = np.linspace(0.0, 2.0 * np.pi * periods, shape[-1])
        phase = gen.uniform(0, 2 * np.pi, size=shape[:-1] + (1,))
        mix = gen.uniform(0.5, 1.0, size=shape[:-1] + (1,))
        return amp * mix * np.sin(t + phase)

    band = profile.in_band
    amp = np.ones((w, n))
    amp += 0.15 * np.sin(np.linspace(0, np.pi, n))[None, :]
    amp *= 1.0 + 0.1 * np.sin(np.linspace(0, 4 * np.pi, w))[:, None]
    amp += 0.02 * gen.standard_normal((w, 1))
    # single-sided interferograms resolve phase only down to 1/(2 c dl) in
    # wavenumber; instrument pose errors are low-order, so keep the phase
    # variation coarser than that limit or no estimator could see it
    phase_err = 0.2 + smooth((w, n), 0.05, periods=1.2)
    a = np.where(band[None, :], amp * np.exp(1j * phase_err), 0.0)

    beta_col = 1.4 * n * (0.9 + 0.2 * gen.uniform(0, 1, size=(w, 1)))
    beta = np.broadcast_to(beta_col, (w, l)).copy()

    m_r = 1.0 + 0.1 * gen.uniform(-1, 1, size=(w, 1)) + smooth((w, l), 0.06, periods=5.0)
    m_r = np.maximum(m_r, 0.3)
    m_r /= m_r.mean()
    m_a = 1.0 + 0.1 * np.sin(np.linspace(0.3, 1.7 * np.pi, l))[None, :] * gen.uniform(0.5, 1.0, (w, 1))
    m_a /= m_a.mean(axis=1, keepdims=True)
    m = m_r * m_a
    m /= m.mean()

    k = k_mean * (1.0 + 0.15 * gen.uniform(-1, 1, size=(w, 1)) + smooth((w, l), 0.02))
    k = np.maximum(k, 0.2)
    d = 100.0 * (1.0 + 0.2 * gen.uniform(-1, 1, size=(w, 1)) + smooth((w, l), 0.05))
    sigma_read = 5.0 * (1.0 + 0.5 * gen.uniform(0, 1, size=(w, 1)) + smooth((w, l), 0.1))
    sigma_read = np.maximum(sigma_read, 0.5)
    params = DegradationParams(a=a, beta=beta, m=m, k=k, d=d, sigma_read=sigma_read,
                               e=e, profile=profile)
    return params, {"m_r": m_r, "m_a": m_a}


def demo_params(profile: InstrumentProfile | str, seed: int = 0,
                e: float = 0.05, w: int | None = None,
                k_mean: float = 1.5) -> DegradationParams:
    return demo_instrument(profile, seed=seed, e=e, w=w, k_mean=k_mean)[0]
