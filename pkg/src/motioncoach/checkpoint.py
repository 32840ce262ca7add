"""Binary checkpoint container: "CGTW" magic, u32 version, then
length-prefixed named parameter blobs (f32 little-endian, shape-tagged)."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CGTW"
VERSION = 1


def save_arrays(path, arrays: dict) -> None:
    """Write {name: ndarray} in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ValueError("bad magic")
    version, count = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
            off += 4 * n
            out[name] = arr.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise ValueError("truncated checkpoint") from exc
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return out
