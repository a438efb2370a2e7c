"""PSQW checkpoint format: named float tensors in one binary container.

Layout (all integers little-endian):
    magic "PSQW" | version u16 | layer count u32
    per layer: name length u16, UTF-8 name, dtype tag u8 (0=f32, 1=f64),
               rank u32, dims u32 each, raw little-endian values.
Round trips are bit-exact.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"PSQW"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_checkpoint(path, tensors):
    """Write an ordered mapping name -> float32/float64 ndarray."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(tensors))
    for name, array in tensors.items():
        array = np.asarray(array)
        dtype = np.dtype(array.dtype)
        if dtype not in _TAG_FOR_KIND:
            raise FormatError(f"unsupported dtype {dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BI", _TAG_FOR_KIND[dtype], array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += np.ascontiguousarray(array, dtype=dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path):
    """Read a PSQW file into an ordered dict name -> ndarray."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic: not a PSQW checkpoint", offset=0)
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported PSQW version {version}", offset=4)
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        tag, rank = r.unpack("<BI", "dtype/rank")
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}", offset=r.pos)
        shape = r.unpack(f"<{rank}I", "dims")
        dtype = _DTYPE_TAGS[tag]
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(n * dtype.itemsize, f"values of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    return tensors
