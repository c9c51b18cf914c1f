"""Degradation-parameter estimation from radiometric calibration captures.

Inputs are three capture families sharing one profile:

  * a dark capture (no light): dark current and readout noise per element,
  * relative captures (interferometer removed, uniform light, no fringes) at
    several brightness levels: gain via the Poisson variance/mean ratio, and
    the sensor part of the relative response from the flat-field means,
  * absolute captures (uniform light interferograms) with known reference
    spectra: scan envelope, complex spectral response, and background.

All estimators are deterministic, per-column independent, and work on means
and variances along H, so capture height sets the estimator precision.

Flat-field means are divided by the estimated gain before any shape is
attributed to the response maps; skipping that division would bake the gain
into M and A and double-count it in the forward model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import Cube, column_stats, column_mean
from .degrade import DegradationParams, electronic_degrade, optical_degrade
from .ihic_io import read_array, read_cube, write_array, write_cube
from .profiles import InstrumentProfile
from .rng import RngHandle
from .transform import TransformBasis, build_basis

INVALID_BUDGET = 0.10
DIVISION_GUARD = 1e-6


class CalibrationError(RuntimeError):
    """An estimation stage exceeded its invalid-element budget or is ill-posed."""


@dataclass(frozen=True)
class CalibrationSet:
    """Dark, relative and absolute captures plus reference spectra."""

    i_r0: Cube
    i_r: list
    i_a: list
    b_a: list

    def __post_init__(self):
        if self.i_r0.h < 16:
            raise ValueError("calibration captures need H >= 16")
        if len(self.i_r) < 2 or len(self.i_a) != len(self.i_r) or len(self.b_a) != len(self.i_r):
            raise ValueError("need n >= 2 matched relative/absolute levels")
        prof = self.i_r0.profile
        n = prof.num_nu
        for c in [self.i_r0, *self.i_r, *self.i_a]:
            if c.axis_kind != "opd" or c.profile.name != prof.name or c.w != self.i_r0.w:
                raise ValueError("all captures must be opd cubes on one profile")
        for b in self.b_a:
            if np.asarray(b).shape != (n,):
                raise ValueError(f"reference spectra must be length-{n} vectors")

    @property
    def profile(self) -> InstrumentProfile:
        return self.i_r0.profile

    @property
    def levels(self) -> int:
        return len(self.i_r)


def estimate_dark(i_r0: Cube):
    """Dark current and readout std per element, from H-direction statistics."""
    return column_stats(i_r0)


def estimate_gain(i_r: list, d: np.ndarray, sigma_read: np.ndarray):
    """Per-element system gain from the shot-noise variance/mean ratio.

    Each level gives K_i = (var_H - sigma_read^2) / (mean_H - D); the result
    averages the valid levels.  Elements valid at no level are filled with
    their column median and reported; more than 10% invalid elements is an
    error.
    """
    estimates = []
    valids = []
    for cube in i_r:
        mean, std = column_stats(cube)
        num = std**2 - sigma_read**2
        den = mean - d
        valid = (den > 0) & (num > 0)
        k_i = np.zeros_like(den)
        np.divide(num, den, out=k_i, where=valid)
        estimates.append(k_i)
        valids.append(valid)
    est = np.stack(estimates)
    valid = np.stack(valids)
    counts = valid.sum(axis=0)
    with np.errstate(invalid="ignore"):
        k = np.where(counts > 0, (est * valid).sum(axis=0) / np.maximum(counts, 1), np.nan)

    invalid = counts == 0
    frac = float(invalid.mean())
    if frac > INVALID_BUDGET:
        raise CalibrationError(
            f"gain estimation invalid for {frac:.1%} of elements (budget {INVALID_BUDGET:.0%})"
        )
    if np.any(invalid):
        for w in np.flatnonzero(invalid.any(axis=1)):
            row = k[w]
            good = ~invalid[w]
            fill = np.median(row[good]) if good.any() else 1.0
            row[~good] = fill
    return k, invalid


def _cos_series(length: int, modes: int) -> np.ndarray:
    """Half-sample cosine series, columns q = 0..modes-1."""
    t = (np.arange(length) + 0.5) / length
    return np.cos(np.pi * np.outer(t, np.arange(modes)))


def _fringe_halfwidth(profile: InstrumentProfile) -> int:
    """Centerburst extent in OPD samples: the band's coherence length."""
    bw = 1.0 / profile.lambda_grid[0] - 1.0 / profile.lambda_grid[-1]
    return max(3, int(round(1.0 / (bw * profile.delta_l))))


ENVELOPE_MODES = 5


def estimate_m(i_r: list, i_a: list, d: np.ndarray, gain: np.ndarray | None = None):
    """Relative response split into sensor non-uniformity and scan envelope.

    m_r: gain-corrected flat-field means, each level normalized to mean one,
    averaged.  m_a: the scan envelope, a smooth trend along OPD; it is fit as
    a low-order cosine series to the gain- and m_r-corrected absolute means
    with the fringe band masked out.  A global smooth model (rather than a
    running mean) is what lets the envelope be evaluated inside the masked
    centerburst, which is where the response fit downstream is most
    sensitive.  Returns (m_r, m_a, m) with m scaled to global mean one.
    """
    gain = 1.0 if gain is None else gain
    flats = []
    for cube in i_r:
        flat = (column_mean(cube) - d) / gain
        flats.append(flat / flat.mean())
    m_r = np.mean(flats, axis=0)
    m_r /= m_r.mean()

    guard = m_r < DIVISION_GUARD * m_r.max()
    m_r_safe = np.where(guard, DIVISION_GUARD * m_r.max(), m_r)

    profile = i_a[0].profile
    l = profile.num_opd
    keep = np.abs(np.arange(l) - profile.center) > _fringe_halfwidth(profile)
    p_env = _cos_series(l, ENVELOPE_MODES)

    envs = []
    for cube in i_a:
        base = (column_mean(cube) - d) / (gain * m_r_safe)
        sol, *_ = np.linalg.lstsq(p_env[keep], base[:, keep].T, rcond=None)
        env = (p_env @ sol).T
        envs.append(env / env.mean(axis=1, keepdims=True))
    m_a = np.mean(envs, axis=0)
    m_a /= m_a.mean(axis=1, keepdims=True)

    m = m_r * m_a
    m /= m.mean()
    return m_r, m_a, m


def _response_modes(profile: InstrumentProfile, nfit: int) -> int:
    """Spectral resolution of the response fit.

    A single-sided interferogram with c samples before zero OPD resolves
    about 2 * bandwidth * c * delta_l independent complex features across the
    band; finer structure is invisible, so the fit stops there.
    """
    bw = 1.0 / profile.lambda_grid[0] - 1.0 / profile.lambda_grid[-1]
    q = int(round(2.0 * bw * profile.center * profile.delta_l)) + 1
    return min(nfit, max(3, q))


def estimate_a_beta(i_a: list, b_a: list, m: np.ndarray, d: np.ndarray,
                    gain: np.ndarray | None = None,
                    basis: TransformBasis | None = None):
    """Complex spectral response and background coefficient.

    Per level: correct the absolute means down to interferogram units, then
    least-squares fit the real and imaginary response profiles (smooth
    cosine-series over the in-band bins, reference spectrum folded into the
    design) together with below-band cosine columns that absorb the smooth
    background.  The response comes from the fitted in-band model; the
    background coefficient is the in-band-model residual scaled by the
    reference's spectral mean.  Levels are averaged with uniform weights;
    out-of-band response is zero.
    """
    profile = i_a[0].profile
    basis = basis or build_basis(profile)
    gain = 1.0 if gain is None else gain
    l, n = profile.num_opd, profile.num_nu
    guard = m < DIVISION_GUARD * m.max()
    m_safe = np.where(guard, DIVISION_GUARD * m.max(), m)
    below_band = np.arange(profile.in_band_indices[0])

    a_levels = []
    beta_levels = []
    for cube, ref in zip(i_a, b_a):
        ref = np.asarray(ref, dtype=np.float64)
        fit = profile.in_band & (ref >= DIVISION_GUARD * ref.max())
        nfit = int(fit.sum())
        if 2 * nfit > l:
            raise CalibrationError(
                f"spectrum fit ill-posed: 2*{nfit} unknowns > {l} OPD samples; "
                f"truncate the reference band"
            )
        q = _response_modes(profile, nfit)
        p_resp = _cos_series(nfit, q)
        weighted = p_resp * ref[fit, None]                    # response modes scaled by B
        d_re = basis.c_mat[:, fit] @ weighted
        d_im = -(basis.s_mat[:, fit] @ weighted)
        design = np.concatenate([d_re, d_im, basis.c_mat[:, below_band]], axis=1)
        pinv = np.linalg.pinv(design, rcond=1e-8)

        i_prime = (column_mean(cube) - d) / (gain * m_safe)   # (W, L)
        coeffs = pinv @ i_prime.T                             # (2q + nbg, W)
        a_fit = (p_resp @ coeffs[:q] + 1j * (p_resp @ coeffs[q:2 * q])).T
        a_i = np.zeros((i_prime.shape[0], n), dtype=np.complex128)
        a_i[:, fit] = a_fit
        recon = (design[:, :2 * q] @ coeffs[:2 * q]).T        # in-band model only
        beta_i = (i_prime - recon) / ref.mean()
        a_levels.append(a_i)
        beta_levels.append(beta_i)

    a = np.mean(a_levels, axis=0)
    beta = np.mean(beta_levels, axis=0)

    # keep the response nonzero across the whole band: bins guarded out of
    # every fit inherit the nearest fitted bin
    band = profile.in_band
    fitted = np.abs(a).sum(axis=0) > 0
    missing = band & ~fitted
    if np.any(missing):
        src = np.flatnonzero(fitted & band)
        for j in np.flatnonzero(missing):
            a[:, j] = a[:, src[np.argmin(np.abs(src - j))]]
    return a, beta


def _beta_opd_profile(beta_map: np.ndarray, modes: int = ENVELOPE_MODES) -> np.ndarray:
    """Smooth per-column OPD profile of an estimated background map,
    normalized to mean one along OPD."""
    l = beta_map.shape[1]
    p_env = _cos_series(l, modes)
    sol, *_ = np.linalg.lstsq(p_env, beta_map.T, rcond=None)
    prof = (p_env @ sol).T
    prof = np.clip(prof, 0.2 * prof.mean(axis=1, keepdims=True), None)
    return prof / prof.mean(axis=1, keepdims=True)


ENVELOPE_REFINE_PASSES = 2


def calibrate_all(calset: CalibrationSet, e: float = 0.0,
                  gain_override: np.ndarray | None = None):
    """Run the estimators in dependency order and package the parameters.

    After the first response/background fit, the scan envelope is refined:
    the background coefficient is stripe-wise constant along OPD, so any
    smooth OPD profile in the estimated background is envelope error and is
    folded back into M before the final fit.  Without that constraint the
    envelope and the background are jointly unidentifiable.

    ``e`` is not estimable from calibration captures and is passed through.
    ``gain_override`` supplies a known gain map (bench setups), skipping the
    variance/mean estimate.  Returns (params, report).
    """
    d, sigma_read = estimate_dark(calset.i_r0)
    if gain_override is None:
        k, invalid = estimate_gain(calset.i_r, d, sigma_read)
    else:
        k, invalid = np.asarray(gain_override, dtype=np.float64), np.zeros_like(d, dtype=bool)
    m_r, m_a, m = estimate_m(calset.i_r, calset.i_a, d, gain=k)
    a, beta = estimate_a_beta(calset.i_a, calset.b_a, m, d, gain=k)
    for _ in range(ENVELOPE_REFINE_PASSES):
        m_a = m_a * _beta_opd_profile(beta)
        m_a /= m_a.mean(axis=1, keepdims=True)
        m = m_r * m_a
        m /= m.mean()
        a, beta = estimate_a_beta(calset.i_a, calset.b_a, m, d, gain=k)
    params = DegradationParams(a=a, beta=beta, m=m, k=k, d=d,
                               sigma_read=sigma_read, e=e,
                               profile=calset.profile)
    report = {
        "dark": {"invalid_count": 0, "notes": f"H={calset.i_r0.h}"},
        "gain": {"invalid_count": int(invalid.sum()),
                 "notes": f"{calset.levels} levels"
                          + (", supplied" if gain_override is not None else "")},
        "m": {"invalid_count": 0,
              "notes": f"{ENVELOPE_REFINE_PASSES} envelope refinement passes"},
        "a_beta": {"invalid_count": 0,
                   "notes": f"{calset.levels} levels, in-band fit"},
    }
    return params, report


# ---------------------------------------------------------------------------
# synthetic calibration benches

def uniform_cube(spec: np.ndarray, h: int, w: int, profile: InstrumentProfile) -> Cube:
    data = np.broadcast_to(np.asarray(spec, dtype=np.float64), (h, w, spec.shape[-1])).copy()
    return Cube(data, "wavenumber", profile)


def reference_spectrum(profile: InstrumentProfile, band_sum: float,
                       tilt: float = 0.0) -> np.ndarray:
    """Smooth in-band emission profile with the given in-band sum.

    Tapered (raised-cosine) edges keep the uniform-light interferogram
    compact around zero OPD, which the scan-envelope estimate relies on.
    ``tilt`` skews the profile toward the red (>0) or blue (<0) end, the way
    a thermal lamp's spectrum shifts with drive level.
    """
    idx = profile.in_band_indices
    t = (np.arange(idx.size) + 0.5) / idx.size
    bump = (np.sin(np.pi * t) ** 2) * (1.0 + tilt * (t - 0.5))
    spec = np.zeros(profile.num_nu)
    spec[idx] = bump * (band_sum / bump.sum())
    return spec


def synthesize_calibration_set(params: DegradationParams, h: int, rng: RngHandle,
                               rel_rates=(1e3, 5e3, 1e4),
                               abs_band_sums=(2e4, 5e4, 1e5),
                               m_r: np.ndarray | None = None,
                               noise: str = "poisson",
                               basis: TransformBasis | None = None) -> CalibrationSet:
    """Generate a calibration bench from known parameters.

    Relative captures see only the sensor part of the relative response
    (``m_r``, default: the full map) because the interferometer is removed.
    The per-capture electronic gain is pinned to one — a calibration bench
    measures a stable sensor state.  ``noise='gaussian'`` swaps the Poisson
    draw for Normal(rate, sqrt(|rate|)) without clamping, useful when the
    parameters are intentionally unphysical (background too small).
    """
    profile = params.profile
    basis = basis or build_basis(profile)
    m_r = params.m if m_r is None else m_r
    w = params.w

    def capture(rates: np.ndarray, handle: RngHandle) -> Cube:
        cube = Cube(np.broadcast_to(rates, (h, w, profile.num_opd)).copy(), "opd", profile)
        if noise == "poisson":
            return electronic_degrade(cube, params.k, params.d, params.sigma_read, handle)
        gen = handle.generator()
        counts = rates + np.sqrt(np.abs(rates)) * gen.standard_normal((h, w, profile.num_opd))
        read = params.sigma_read[None] * gen.standard_normal((h, w, profile.num_opd))
        return Cube(params.k[None] * counts + params.d[None] + read, "opd", profile)

    i_r0 = capture(np.zeros((1, w, profile.num_opd)), rng.child(0))
    i_r = [capture((m_r * r)[None], rng.child(10 + i)) for i, r in enumerate(rel_rates)]

    tilts = (0.0, 0.8, -0.8)  # lamp spectra shift with drive level
    i_a = []
    b_a = []
    for i, band_sum in enumerate(abs_band_sums):
        ref = reference_spectrum(profile, band_sum, tilt=tilts[i % len(tilts)])
        b0 = uniform_cube(ref, 1, w, profile)
        i_o = optical_degrade(b0, params, basis).data[0]  # (W, L), H-constant
        i_a.append(capture(i_o[None], rng.child(20 + i)))
        b_a.append(ref)
    return CalibrationSet(i_r0=i_r0, i_r=i_r, i_a=i_a, b_a=b_a)


# ---------------------------------------------------------------------------
# on-disk capture layout for the CLI

def save_calibration_set(calset: CalibrationSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cube(calset.i_r0, directory / "dark.ihic")
    for i, (rel, absc, ref) in enumerate(zip(calset.i_r, calset.i_a, calset.b_a)):
        write_cube(rel, directory / f"rel_{i}.ihic")
        write_cube(absc, directory / f"abs_{i}.ihic")
        write_array(np.asarray(ref), directory / f"ref_{i}.ihic")
    with open(directory / "calibration.json", "w") as f:
        json.dump({"levels": calset.levels}, f)


def load_calibration_set(directory) -> CalibrationSet:
    directory = Path(directory)
    with open(directory / "calibration.json") as f:
        levels = json.load(f)["levels"]
    return CalibrationSet(
        i_r0=read_cube(directory / "dark.ihic"),
        i_r=[read_cube(directory / f"rel_{i}.ihic") for i in range(levels)],
        i_a=[read_cube(directory / f"abs_{i}.ihic") for i in range(levels)],
        b_a=[read_array(directory / f"ref_{i}.ihic") for i in range(levels)],
    )
