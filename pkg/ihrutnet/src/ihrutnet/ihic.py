"""Minimal reader/writer for the IHIC array format and the framed bridge
protocol, re-implemented from the documented wire layouts so this package
has no code dependency on the producer toolkit.

IHIC: "IHIC" magic, u16 LE version (=1), u8 dtype (1=f32, 2=f64), u8 ndim,
ndim x u32 LE dims, row-major payload.  Bridge frame: "IHPB" magic, u32 LE
payload length, IHIC payload, u16 LE stage index.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IHIC"
BRIDGE_MAGIC = b"IHPB"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FormatError(ValueError):
    pass


def decode_array(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(blob[:4])!r}")
    version, dtype_code, ndim = struct.unpack("<HBB", blob[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype_code not in _DTYPES or ndim not in (1, 2, 3):
        raise FormatError(f"bad dtype/ndim {dtype_code}/{ndim}")
    dims = struct.unpack(f"<{ndim}I", blob[8:8 + 4 * ndim])
    dtype = _DTYPES[dtype_code]
    count = int(np.prod(dims))
    offset = 8 + 4 * ndim
    if len(blob) - offset < count * dtype.itemsize:
        raise FormatError("truncated payload")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(dims).copy()


def encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    header = MAGIC + struct.pack("<HBB", VERSION, _CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def read_cube(path):
    """Returns (data, sidecar dict) for a cube with its JSON sidecar."""
    data = read_array(path)
    with open(Path(path).with_suffix(".json")) as f:
        return data, json.load(f)


def encode_bridge_message(arr: np.ndarray, stage: int) -> bytes:
    payload = encode_array(arr)
    return BRIDGE_MAGIC + struct.pack("<I", len(payload)) + payload + struct.pack("<H", stage)


def read_exact(read, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = read(n - got)
        if not chunk:
            raise FormatError(f"stream closed after {got}/{n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def decode_bridge_message(read):
    magic = read_exact(read, 4)
    if magic != BRIDGE_MAGIC:
        raise FormatError(f"bad bridge magic {magic!r}")
    (length,) = struct.unpack("<I", read_exact(read, 4))
    payload = read_exact(read, length)
    (stage,) = struct.unpack("<H", read_exact(read, 2))
    return decode_array(payload), stage
