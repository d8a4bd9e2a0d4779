"""Binary checkpoint container.

Layout (little endian)::

    b"SPKFCKPT" | u32 version | u64 seed | u32 len + utf-8 config text
    u32 count | count x (u32 len + name, u32 ndim, ndim x u64 dims, f64 data)

Parameters are written in lexicographic order of their ids.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPKFCKPT"
VERSION = 1


def save_checkpoint(path, params, config_text, seed):
    items = sorted(params.items()) if isinstance(params, dict) else params.items()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, int(seed) % 2**64))
        cfg = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(items)))
        for name, t in items:
            arr = np.asarray(getattr(t, "data", t), dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return (state dict name -> array, config text, seed)."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    off = 8
    version, seed = struct.unpack_from("<IQ", data, off)
    off += 12
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    config_text = data[off:off + n].decode("utf-8")
    off += n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    return state, config_text, seed
