"""Binary checkpoint format.

Layout (little-endian): magic ``MUGN1``, u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 rank, u32 per dim, raw f32 data. Round-trips
f32 arrays bit-exactly.
"""

import struct

import numpy as np

from .exceptions import DataError

MAGIC = b"MUGN1"


class CheckpointError(DataError):
    pass


def save_checkpoint(path, named_arrays):
    """``named_arrays``: iterable of (name, ndarray) or a dict."""
    items = list(named_arrays.items()) if isinstance(named_arrays, dict) else list(named_arrays)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name[:40]}...")
            if data.ndim > 0xFF:
                raise CheckpointError(f"tensor rank {data.ndim} exceeds format limit")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(data.tobytes())


def load_checkpoint(path):
    """Returns an ordered {name: f32 ndarray} dict."""
    out = {}
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        if f.read(5) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise CheckpointError(f"{path}: truncated data for tensor {name}")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return out
