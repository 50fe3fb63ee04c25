"""Binary weights container.

Layout (all integers little-endian)::

    b"MMWT" | version u16 | entry count u32
    per entry: name length u32 | UTF-8 name | rank u32 | dims u32 * rank | float32 values
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MMWT"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def dumps_weights(store):
    parts = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, arr in store.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_weights(data):
    view = memoryview(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise WeightsFormatError(f"truncated weights file while reading {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights format version {version}")
    store = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = bytes(take(nlen, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError(f"entry name is not UTF-8: {exc}") from None
        (rank,) = struct.unpack("<I", take(4, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(4 * n, f"values of {name}"), dtype="<f4")
        store[name] = values.reshape(dims).astype(np.float32)
    if pos != len(view):
        raise WeightsFormatError(f"{len(view) - pos} trailing bytes after last entry")
    return store


def save_weights(store, path):
    with open(path, "wb") as fh:
        fh.write(dumps_weights(store))


def load_weights(path, network=None):
    """Read a weights file; with ``network`` every shape is validated against it."""
    with open(path, "rb") as fh:
        store = loads_weights(fh.read())
    if network is not None:
        network.load_params(store)
    return store
