"""Reader/writer for the IHIC binary array format plus cube JSON sidecars.

Layout, all little-endian:

    bytes 0..3   magic "IHIC"
    bytes 4..5   u16 version (currently 1)
    byte  6      u8 dtype code: 1 = float32, 2 = float64
    byte  7      u8 ndim (1 = spectrum, 2 = parameter map, 3 = cube)
    next ndim*4  u32 dims, outermost first (H, W, C for cubes)
    rest         payload, row-major, last axis fastest

Write-then-read is bit-identical for any finite array.  Cubes additionally
get a ``<stem>.json`` sidecar carrying the axis kind and the profile grids.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cube import Cube
from .profiles import InstrumentProfile

MAGIC = b"IHIC"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_MAX_PAYLOAD_BYTES = 1 << 40


class FormatError(ValueError):
    """Base for malformed IHIC data; ``field`` names the offending header field."""

    field = "header"

    def __init__(self, message: str):
        super().__init__(f"{self.field}: {message}")


class BadMagicError(FormatError):
    field = "magic"


class VersionMismatchError(FormatError):
    field = "version"


class BadDtypeError(FormatError):
    field = "dtype_code"


class BadNdimError(FormatError):
    field = "ndim"


class DimOverflowError(FormatError):
    field = "dims"


class TruncatedPayloadError(FormatError):
    field = "payload"


class NonFiniteError(ValueError):
    """Array rejected at write time because it contains NaN or Inf."""


def encode_array(arr: np.ndarray) -> bytes:
    """IHIC encoding of a 1-D/2-D/3-D float array (also used by the prior bridge)."""
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    if arr.ndim not in (1, 2, 3):
        raise BadNdimError(f"only 1-D..3-D arrays supported, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("refusing to encode non-finite values")
    for k, d in enumerate(arr.shape):
        if d >= 1 << 32:
            raise DimOverflowError(f"dims[{k}] = {d} does not fit in u32")
    header = MAGIC + struct.pack("<HBB", VERSION, _CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
    return header + payload.tobytes()


def write_array(arr: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_array(arr))


def read_array(path) -> np.ndarray:
    """Read an IHIC file written by :func:`write_array` / :func:`write_cube`."""
    with open(path, "rb") as f:
        blob = f.read()
    return decode_array(blob)


def decode_array(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise TruncatedPayloadError(f"file is {len(blob)} bytes, header needs 8")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"expected {MAGIC!r}, got {bytes(blob[:4])!r}")
    version, dtype_code, ndim = struct.unpack("<HBB", blob[4:8])
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
    if dtype_code not in _DTYPES:
        raise BadDtypeError(f"unknown dtype code {dtype_code}")
    if ndim not in (1, 2, 3):
        raise BadNdimError(f"ndim must be 1..3, got {ndim}")
    if len(blob) < 8 + 4 * ndim:
        raise TruncatedPayloadError("header ends inside the dims list")
    dims = struct.unpack(f"<{ndim}I", blob[8:8 + 4 * ndim])
    dtype = _DTYPES[dtype_code]
    count = 1
    for d in dims:
        count *= d
    if count * dtype.itemsize > _MAX_PAYLOAD_BYTES:
        raise DimOverflowError(f"dims {dims} imply an implausible payload size")
    offset = 8 + 4 * ndim
    expected = count * dtype.itemsize
    if len(blob) - offset < expected:
        raise TruncatedPayloadError(
            f"payload has {len(blob) - offset} bytes, dims {dims} require {expected}"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy()


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_cube(cube: Cube, path, dtype=None) -> None:
    """Write a cube plus its JSON sidecar.

    ``dtype`` overrides the payload precision; by default the cube's own
    dtype is kept so the round trip stays bit-identical.
    """
    data = cube.data if dtype is None else cube.data.astype(dtype)
    write_array(data, path)
    sidecar = {
        "axis_kind": cube.axis_kind,
        "H": cube.h,
        "W": cube.w,
        "C": cube.c,
        "lambda_nm": cube.profile.lambda_grid.tolist(),
        "nu_per_nm": cube.profile.nu_grid.tolist(),
        "opd_nm": cube.profile.opd_grid.tolist(),
        "center_index": cube.profile.center,
        "profile": cube.profile.to_dict(),
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f)


def read_cube(path) -> Cube:
    data = read_array(path)
    with open(_sidecar_path(path)) as f:
        sidecar = json.load(f)
    profile = InstrumentProfile.from_dict(sidecar["profile"])
    return Cube(data, sidecar["axis_kind"], profile)
