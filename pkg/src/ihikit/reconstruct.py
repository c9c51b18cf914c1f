"""Reconstruction: direct inverse, simplified traditional pipeline, and the
degradation-guided unfolding iteration with pluggable priors.

The unfolding loop alternates a data step and a prior step,

    z = x_k + alpha * F'(y' - F x_k) [+ (x_k - x_{k-1})],
    x_{k+1} = prior(z, k),

with F the signal-dependent forward model and F' its per-column
pseudo-inverse.  Priors are denoisers on wavenumber cubes; the external
bridge runs one out of process over a framed binary protocol.
"""

from __future__ import annotations

import socket
import struct
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .cube import Cube, resample_wavenumber_to_hsi, spectral_mean
from .degrade import DegradationParams
from .ihic_io import decode_array, encode_array
from .transform import InverseCache, TransformBasis, apply_forward, apply_inverse, build_basis, build_inverse

PRECORRECT_MODES = ("none", "dark-only", "dark+background")

BRIDGE_MAGIC = b"IHPB"


class PriorError(RuntimeError):
    def __init__(self, stage: int, message: str):
        self.stage = stage
        super().__init__(f"prior failed at stage {stage}: {message}")


class BridgeTimeoutError(PriorError):
    pass


class BridgeShapeError(PriorError):
    pass


class BridgeProtocolError(PriorError):
    pass


@dataclass
class Operators:
    """Forward/inverse pair plus the shared basis for one parameter set."""

    params: DegradationParams
    basis: TransformBasis
    cache: InverseCache

    @classmethod
    def build(cls, params: DegradationParams) -> "Operators":
        basis = build_basis(params.profile)
        return cls(params, basis, build_inverse(params, basis))

    def forward(self, x: Cube) -> Cube:
        return apply_forward(x, self.params, self.basis)

    def inverse(self, y: Cube) -> Cube:
        return apply_inverse(y, self.params, self.cache)


def precorrect(y: Cube, params: DegradationParams, mode: str = "dark-only",
               ops: Operators | None = None) -> Cube:
    """Remove signal-independent terms from a measurement.

    dark-only subtracts the dark current.  dark+background additionally
    estimates the per-pixel mean spectral brightness from a first-pass
    inversion and subtracts K*M*beta*mean, then refines the estimate once
    (the background is signal-dependent, so one bootstrap pass).
    """
    if mode not in PRECORRECT_MODES:
        raise ValueError(f"unknown precorrect mode {mode!r}; expected {PRECORRECT_MODES}")
    if mode == "none":
        return y
    y1 = Cube(y.data - params.d[None, :, :], "opd", y.profile)
    if mode == "dark-only":
        return y1
    ops = ops or Operators.build(params)
    kmb = (params.k * params.m * params.beta)[None, :, :]
    corrected = y1
    for _ in range(2):  # estimate + one refinement pass
        mu = spectral_mean(ops.inverse(corrected))
        corrected = Cube(y1.data - kmb * mu[:, :, None], "opd", y.profile)
    return corrected


def reconstruct_direct(y: Cube, params: DegradationParams,
                       ops: Operators | None = None) -> Cube:
    """The plain pseudo-inverse baseline: precorrect, invert, resample."""
    ops = ops or Operators.build(params)
    y_c = precorrect(y, params, "dark+background", ops)
    return resample_wavenumber_to_hsi(ops.inverse(y_c))


def reconstruct_traditional(y: Cube, params: DegradationParams,
                            basis: TransformBasis | None = None) -> Cube:
    """Simplified classical pipeline: dark subtraction, flat-field division,
    triangular apodization, unit-response pseudo-inverse, magnitude-only
    response correction.  No phase handling and no background removal."""
    profile = y.profile
    basis = basis or build_basis(profile)
    l = profile.num_opd
    c = profile.center
    window = 1.0 - np.abs(np.arange(l) - c) / max(c, l - 1 - c)
    corrected = (y.data - params.d[None, :, :]) / params.m[None, :, :]
    apodized = corrected * window[None, None, :]

    pinv = np.linalg.pinv(basis.c_mat * window[:, None], rcond=1e-10)
    spec = apodized @ pinv.T

    mag = np.abs(params.a)
    band = profile.in_band
    gain = np.zeros_like(mag)
    gain[:, band] = 1.0 / np.maximum(mag[:, band], 1e-6 * mag.max())
    spec = spec * gain[None, :, :]
    return resample_wavenumber_to_hsi(Cube(spec, "wavenumber", profile))


# ---------------------------------------------------------------------------
# priors

class IdentityPrior:
    def denoise(self, x: Cube, stage: int) -> Cube:
        return x


class SoftThresholdPrior:
    """Shrinks first differences along the spectral axis by tau; the first
    channel is kept, so constants pass through unchanged."""

    def __init__(self, tau: float):
        if tau < 0:
            raise ValueError("tau must be >= 0")
        self.tau = tau

    def denoise(self, x: Cube, stage: int) -> Cube:
        if self.tau == 0.0:
            return x
        d = np.diff(x.data, axis=2)
        d = np.sign(d) * np.maximum(np.abs(d) - self.tau, 0.0)
        out = np.concatenate([x.data[:, :, :1], d], axis=2).cumsum(axis=2)
        return x.with_data(out)


class TvPrior:
    """Channel-wise spatial total-variation denoiser (Chambolle's dual
    projection), solving min 0.5||u - x||^2 + lam * TV(u) per channel."""

    def __init__(self, lam: float, iters: int = 30):
        if lam < 0:
            raise ValueError("lam must be >= 0")
        self.lam = lam
        self.iters = iters

    def denoise(self, x: Cube, stage: int) -> Cube:
        if self.lam == 0.0:
            return x
        data = x.data.astype(np.float64, copy=True)
        for ch in range(data.shape[2]):
            data[:, :, ch] = _tv_chambolle(data[:, :, ch], self.lam, self.iters)
        return x.with_data(data)


def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:-1, :] = u[1:, :] - u[:-1, :]
    gy[:, :-1] = u[:, 1:] - u[:, :-1]
    return gx, gy


def _div(px, py):
    d = np.zeros_like(px)
    d[0, :] = px[0, :]
    d[1:-1, :] = px[1:-1, :] - px[:-2, :]
    d[-1, :] = -px[-2, :]
    d[:, 0] += py[:, 0]
    d[:, 1:-1] += py[:, 1:-1] - py[:, :-2]
    d[:, -1] += -py[:, -2]
    return d


def _tv_chambolle(f: np.ndarray, lam: float, iters: int, tau: float = 0.249) -> np.ndarray:
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    for _ in range(iters):
        gx, gy = _grad(_div(px, py) - f / lam)
        norm = 1.0 + tau * np.hypot(gx, gy)
        px = (px + tau * gx) / norm
        py = (py + tau * gy) / norm
    return f - lam * _div(px, py)


# ---------------------------------------------------------------------------
# external prior bridge

def _read_exact(read, n: int, stage: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = read(n - got)
        if not chunk:
            raise BridgeProtocolError(stage, f"stream closed after {got}/{n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def encode_bridge_message(arr: np.ndarray, stage: int) -> bytes:
    payload = encode_array(arr)
    return BRIDGE_MAGIC + struct.pack("<I", len(payload)) + payload + struct.pack("<H", stage)


def decode_bridge_message(read, stage_hint: int = -1):
    """Read one framed message via ``read(n)``; returns (array, stage)."""
    magic = _read_exact(read, 4, stage_hint)
    if magic != BRIDGE_MAGIC:
        raise BridgeProtocolError(stage_hint, f"bad magic {magic!r}")
    (length,) = struct.unpack("<I", _read_exact(read, 4, stage_hint))
    payload = _read_exact(read, length, stage_hint)
    (stage,) = struct.unpack("<H", _read_exact(read, 2, stage_hint))
    return decode_array(payload), stage


class ExternalPrior:
    """Denoiser behind the framed bridge protocol, over a subprocess' stdio
    or a TCP endpoint ("host:port").  One request in flight at a time."""

    def __init__(self, command: list | None = None, endpoint: str | None = None,
                 timeout: float = 30.0):
        if (command is None) == (endpoint is None):
            raise ValueError("provide exactly one of command / endpoint")
        self.command = command
        self.endpoint = endpoint
        self.timeout = timeout
        self._proc = None
        self._sock = None

    def _ensure_channel(self, stage: int):
        if self.command is not None:
            if self._proc is None or self._proc.poll() is not None:
                self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE,
                                              stdout=subprocess.PIPE)
            return
        if self._sock is None:
            host, _, port = self.endpoint.rpartition(":")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
                self._sock.settimeout(self.timeout)
            except (OSError, ValueError) as exc:
                raise BridgeProtocolError(stage, f"cannot reach {self.endpoint}: {exc}") from exc

    def _pipe_read(self, stage: int):
        import os
        import select

        # raw fd reads: select on a BufferedReader lies once bytes sit in its
        # internal buffer
        fd = self._proc.stdout.fileno()

        def read(n: int) -> bytes:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise BridgeTimeoutError(stage, f"no response within {self.timeout}s")
            return os.read(fd, n)

        return read

    def denoise(self, x: Cube, stage: int) -> Cube:
        self._ensure_channel(stage)
        message = encode_bridge_message(x.data, stage)
        try:
            if self._proc is not None:
                self._proc.stdin.write(message)
                self._proc.stdin.flush()
                arr, _ = decode_bridge_message(self._pipe_read(stage), stage)
            else:
                self._sock.sendall(message)
                arr, _ = decode_bridge_message(self._sock.recv, stage)
        except socket.timeout as exc:
            raise BridgeTimeoutError(stage, f"no response within {self.timeout}s") from exc
        if arr.shape != x.data.shape:
            raise BridgeShapeError(stage, f"got {arr.shape}, expected {x.data.shape}")
        return x.with_data(arr)

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


PRIOR_BUILDERS = {
    "identity": lambda cfg: IdentityPrior(),
    "soft_threshold": lambda cfg: SoftThresholdPrior(cfg.get("tau", 0.0)),
    "tv": lambda cfg: TvPrior(cfg.get("lam", 0.0), cfg.get("iters", 30)),
}


def make_prior(prior_id: str, prior_params: dict | None = None):
    prior_params = prior_params or {}
    if prior_id == "external":
        return ExternalPrior(command=prior_params.get("command"),
                             endpoint=prior_params.get("endpoint"),
                             timeout=prior_params.get("timeout", 30.0))
    try:
        return PRIOR_BUILDERS[prior_id](prior_params)
    except KeyError:
        raise ValueError(f"unknown prior {prior_id!r}") from None


# ---------------------------------------------------------------------------
# unfolding

@dataclass
class UnfoldConfig:
    stages: int = 5
    alpha: float | np.ndarray = 1.0
    prior: str = "identity"
    prior_params: dict = field(default_factory=dict)
    background: str = "dark-only"  # precorrect mode
    momentum: bool = False

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        alpha = self.alpha if np.isscalar(self.alpha) else np.asarray(self.alpha, dtype=np.float64)
        if np.any(np.asarray(alpha) < 0) or not np.all(np.isfinite(np.asarray(alpha))):
            raise ValueError("alpha must be finite and >= 0")
        self.alpha = alpha


@dataclass
class UnfoldResult:
    hsi: Cube
    spectrum: Cube
    trace: list  # data-fidelity ||y' - F x_k|| per stage, stages + 1 entries


def unfold(y: Cube, params: DegradationParams, config: UnfoldConfig,
           prior=None, ops: Operators | None = None) -> UnfoldResult:
    """Degradation-guided unfolding iteration.

    alpha may be a scalar, a per-column vector (W,), or a per-(W, L) map;
    the map weights the OPD-domain residual before inversion, which is the
    only place its shape fits.
    """
    ops = ops or Operators.build(params)
    prior = prior if prior is not None else make_prior(config.prior, config.prior_params)
    y_c = precorrect(y, params, config.background, ops)

    alpha = config.alpha
    alpha_mode = "scalar"
    if not np.isscalar(alpha):
        if alpha.shape == (params.w,):
            alpha_mode = "column"
        elif alpha.shape == (params.w, params.profile.num_opd):
            alpha_mode = "map"
        else:
            raise ValueError(f"alpha shape {alpha.shape} matches neither (W,) nor (W, L)")

    x = ops.inverse(y_c)
    x_prev = x
    trace = []
    for k in range(config.stages):
        residual = y_c.data - ops.forward(x).data
        trace.append(float(np.linalg.norm(residual)))
        if alpha_mode == "map":
            weighted = Cube(residual * alpha[None, :, :], "opd", y.profile)
            update = ops.inverse(weighted).data
        else:
            update = ops.inverse(Cube(residual, "opd", y.profile)).data
            if alpha_mode == "scalar":
                update = alpha * update
            else:
                update = alpha[None, :, None] * update
        z = x.data + update
        if config.momentum:
            z = z + (x.data - x_prev.data)
        x_prev = x
        x_next = prior.denoise(Cube(z, "wavenumber", y.profile), k)
        if x_next.data.shape != x.data.shape or not np.all(np.isfinite(x_next.data)):
            raise PriorError(k, "prior returned wrong shape or non-finite values")
        x = x_next
    trace.append(float(np.linalg.norm(y_c.data - ops.forward(x).data)))
    return UnfoldResult(hsi=resample_wavenumber_to_hsi(x), spectrum=x, trace=trace)
