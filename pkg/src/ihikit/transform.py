"""Linear operators between wavenumber spectra and interferograms.

The discrete transform is a plain cosine/sine matrix pair on the profile
grids: C[i, j] = cos(2 pi nu_j l_i), S[i, j] = sin(2 pi nu_j l_i).  A pixel's
interferogram is the real part of sum_j A_j B_j exp(i 2 pi nu_j l_i), with the
per-column complex response A folded in, so the full forward map per detector
column is the L x N real matrix

    G_w = diag(K_w * M_w) @ (C @ diag(Re A_w) - S @ diag(Im A_w)).

The inverse is the Moore-Penrose pseudo-inverse of G_w (L >= N keeps the
system overdetermined), computed lazily per column and cached.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import numpy as np

from .cube import Cube
from .profiles import InstrumentProfile

SV_CUTOFF_REL = 1e-10


class RankDeficiencyError(ValueError):
    def __init__(self, column: int, cond: float, detail: str = ""):
        self.column = column
        self.cond = cond
        msg = f"forward operator for column {column} is rank-deficient (cond={cond:.3e})"
        super().__init__(msg + (f": {detail}" if detail else ""))


class InverseCacheError(RuntimeError):
    """apply_inverse called with no operator cache attached to the params."""


@dataclass(frozen=True)
class TransformBasis:
    c_mat: np.ndarray  # (L, N)
    s_mat: np.ndarray  # (L, N)
    profile: InstrumentProfile


def build_basis(profile: InstrumentProfile) -> TransformBasis:
    phase = 2.0 * np.pi * np.outer(profile.opd_grid, profile.nu_grid)
    c_mat = np.cos(phase)
    s_mat = np.sin(phase)
    c_mat.setflags(write=False)
    s_mat.setflags(write=False)
    return TransformBasis(c_mat, s_mat, profile)


def column_forward_matrix(basis: TransformBasis, a_col: np.ndarray) -> np.ndarray:
    """L x N forward matrix for one column's complex response vector."""
    m = basis.c_mat * a_col.real[None, :]
    if np.any(a_col.imag):
        m = m - basis.s_mat * a_col.imag[None, :]
    return m


def apply_interferogram_transform(spec: Cube, a: np.ndarray,
                                  basis: TransformBasis | None = None) -> Cube:
    """Interferograms of a wavenumber cube under the per-column response ``a``.

    a is complex with shape (W, N).  Output value at OPD sample i is
    sum_j (Re a * C[i, j] - Im a * S[i, j]) * spec[..., j].
    """
    if spec.axis_kind != "wavenumber":
        raise ValueError(f"expected a wavenumber cube, got {spec.axis_kind}")
    basis = basis or build_basis(spec.profile)
    a = np.asarray(a)
    if a.shape != (spec.w, spec.c):
        raise ValueError(f"response shape {a.shape} does not match (W, N) = {(spec.w, spec.c)}")
    if not np.all(np.isfinite(a)):
        raise ValueError("response A must be finite")

    data = spec.data.astype(np.float64, copy=False)
    out = (data * a.real[None, :, :]) @ basis.c_mat.T
    if np.iscomplexobj(a) and np.any(a.imag):
        out -= (data * a.imag[None, :, :]) @ basis.s_mat.T
    return Cube(out, "opd", spec.profile)


def apply_forward(x: Cube, params, basis: TransformBasis | None = None) -> Cube:
    """Signal-dependent forward model: gain * response * interferogram transform.

    Background, dark current and noise are signal-independent and excluded.
    """
    interf = apply_interferogram_transform(x, params.a, basis)
    y = interf.data * (params.k * params.m)[None, :, :]
    return Cube(y, "opd", x.profile)


@dataclass(frozen=True)
class ColumnOperator:
    column: int
    forward: np.ndarray       # (L, N) including gain rows
    pinv: np.ndarray          # (N, L)
    min_singular: float
    max_singular: float

    @property
    def cond(self) -> float:
        return self.max_singular / self.min_singular if self.min_singular > 0 else np.inf


class InverseCache:
    """Lazily built per-column pseudo-inverses of the full forward operator.

    Thread-safe: distinct columns may be requested concurrently; each column
    is built once.  A column raises RankDeficiencyError when its operator is
    rank-deficient over the spectral support of the response (bins where
    A is nonzero); zeroed response bins simply map to zero output.
    """

    def __init__(self, params, basis: TransformBasis | None = None):
        self.params = params
        self.basis = basis or build_basis(params.profile)
        self._ops: dict[int, ColumnOperator] = {}
        self._lock = threading.Lock()
        self._col_locks: dict[int, threading.Lock] = {}

    def column(self, w: int) -> ColumnOperator:
        op = self._ops.get(w)
        if op is not None:
            return op
        with self._lock:
            lock = self._col_locks.setdefault(w, threading.Lock())
        with lock:
            op = self._ops.get(w)
            if op is None:
                op = self._build(w)
                self._ops[w] = op
        return op

    def _build(self, w: int) -> ColumnOperator:
        p = self.params
        g = column_forward_matrix(self.basis, p.a[w]) * (p.k[w] * p.m[w])[:, None]
        u, s, vt = np.linalg.svd(g, full_matrices=False)
        if s[0] == 0.0:
            raise RankDeficiencyError(w, np.inf, "zero forward operator")
        cutoff = SV_CUTOFF_REL * s[0]
        keep = s > cutoff
        active = int(np.count_nonzero(np.abs(p.a[w]) > 0.0))
        rank = int(np.count_nonzero(keep))
        if rank < active:
            cond = s[0] / s[-1] if s[-1] > 0 else np.inf
            raise RankDeficiencyError(w, cond, f"rank {rank} < {active} active spectral bins")
        inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        pinv = (vt.T * inv_s[None, :]) @ u.T
        return ColumnOperator(w, g, pinv, float(s[keep][-1]) if rank else 0.0, float(s[0]))

    def build_all(self, threads: int | None = None) -> None:
        """Eagerly build every column, optionally with a small thread pool."""
        cols = range(self.params.w)
        threads = threads if threads is not None else _default_threads()
        if threads <= 1:
            for w in cols:
                self.column(w)
            return
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(self.column, cols))


def _default_threads() -> int:
    env = os.environ.get("IHI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_inverse(params, basis: TransformBasis | None = None) -> InverseCache:
    return InverseCache(params, basis)


def export_operators(params, directory, threads: int | None = None) -> None:
    """Write the per-column forward matrices and pseudo-inverses to disk as
    dense 3-D arrays (forward.ihic: W x L x N, inverse.ihic: W x N x L).

    Downstream learned models load these frozen operators instead of
    re-deriving them, so both sides share one exact operator.
    """
    import json
    from pathlib import Path

    from .ihic_io import write_array

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cache = InverseCache(params)
    cache.build_all(threads)
    profile = params.profile
    l, n = profile.num_opd, profile.num_nu
    fwd = np.empty((params.w, l, n), dtype=np.float64)
    inv = np.empty((params.w, n, l), dtype=np.float64)
    for w in range(params.w):
        op = cache.column(w)
        fwd[w] = op.forward
        inv[w] = op.pinv
    write_array(fwd, directory / "forward.ihic")
    write_array(inv, directory / "inverse.ihic")
    meta = {"W": params.w, "L": l, "N": n, "profile": profile.to_dict(),
            "in_band": profile.in_band.astype(int).tolist()}
    with open(directory / "operators.json", "w") as f:
        json.dump(meta, f)


def apply_inverse(y: Cube, params, cache: InverseCache | None = None) -> Cube:
    """Per-column pseudo-inverse applied to an interferogram cube."""
    if y.axis_kind != "opd":
        raise ValueError(f"expected an opd cube, got {y.axis_kind}")
    cache = cache or getattr(params, "inverse_cache", None)
    if cache is None:
        raise InverseCacheError("no inverse cache; call build_inverse(params) first")
    if y.w != params.w:
        raise ValueError(f"cube W={y.w} does not match params W={params.w}")
    data = y.data.astype(np.float64, copy=False)
    out = np.empty((y.h, y.w, params.profile.num_nu), dtype=np.float64)
    for w in range(y.w):
        out[:, w, :] = data[:, w, :] @ cache.column(w).pinv.T
    return Cube(out, "wavenumber", y.profile)
