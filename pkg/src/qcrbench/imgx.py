"""IMGX exchange format: one JSON header line plus a raw little-endian payload.

Layout, byte for byte:

    {"magic":"IMGX1","height":H,"width":W,"frames":F,"dtype":"f32le"}\n
    <H*W*F values, little-endian, row-major within a frame, frame-major>

``dtype`` is "f32le" (IEEE-754 binary32) for real-valued images such as
transmittance maps and reconstructions, or "u32le" for photon counts. There
is no padding and no trailing data; a reader must reject files whose payload
size disagrees with the header. This module is the reference implementation;
external tools only need the header line and a memcpy to interoperate.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    InvalidArgumentError,
    SizeMismatchError,
    UnsupportedDtypeError,
)

MAGIC = "IMGX1"
_DTYPES = {"f32le": np.dtype("<f4"), "u32le": np.dtype("<u4")}
_MAX_HEADER_BYTES = 4096


def write_imgx(path, frames: np.ndarray, dtype: str) -> None:
    """Write a frame stack to ``path``.

    ``frames`` is (n_frames, height, width) or (height, width) for a single
    frame. Values are cast to the wire dtype; u32le requires non-negative
    integral values that fit in 32 bits, f32le requires finite values.
    """
    if dtype not in _DTYPES:
        raise UnsupportedDtypeError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    arr = np.asarray(frames)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or any(s <= 0 for s in arr.shape):
        raise InvalidArgumentError(f"frames must be (F, H, W) with positive dims, got {arr.shape}")

    if dtype == "u32le":
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.isfinite(arr)) or np.any(arr != np.floor(arr)):
                raise InvalidArgumentError("u32le payload requires integral values")
        if arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max:
            raise InvalidArgumentError("u32le payload values out of 32-bit range")
    else:
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("f32le payload requires finite values")

    n_frames, height, width = arr.shape
    header = json.dumps(
        {"magic": MAGIC, "height": height, "width": width, "frames": n_frames, "dtype": dtype},
        separators=(",", ":"),
    )
    payload = np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False))
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload.tobytes(order="C"))


def read_imgx(path) -> tuple[np.ndarray, dict]:
    """Read an IMGX file; returns (frames, header).

    ``frames`` is (n_frames, height, width) in the wire dtype. Rejects bad
    magic, unknown dtypes, malformed headers, and any payload whose byte
    count differs from height*width*frames*itemsize.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    nl = blob.find(b"\n", 0, _MAX_HEADER_BYTES)
    if nl < 0:
        raise FormatError("no header line found (missing newline in first 4096 bytes)")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header line is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header line must be a JSON object")

    missing = {"magic", "height", "width", "frames", "dtype"} - set(header)
    if missing:
        raise FormatError(f"header missing keys: {sorted(missing)}")
    if header["magic"] != MAGIC:
        raise BadMagicError(f"bad magic {header['magic']!r}, expected {MAGIC!r}")
    if header["dtype"] not in _DTYPES:
        raise UnsupportedDtypeError(f"unsupported dtype {header['dtype']!r}")

    height, width, n_frames = header["height"], header["width"], header["frames"]
    for name, value in (("height", height), ("width", width), ("frames", n_frames)):
        if not isinstance(value, int) or value <= 0:
            raise FormatError(f"header {name} must be a positive integer, got {value!r}")

    wire = _DTYPES[header["dtype"]]
    expected = height * width * n_frames * wire.itemsize
    payload = blob[nl + 1:]
    if len(payload) != expected:
        raise SizeMismatchError(
            f"payload holds {len(payload)} bytes, header promises {expected} "
            f"({n_frames} frames of {height}x{width} {header['dtype']})"
        )
    frames = np.frombuffer(payload, dtype=wire).reshape(n_frames, height, width)
    return frames, header
