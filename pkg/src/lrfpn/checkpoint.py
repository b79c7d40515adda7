"""Binary parameter snapshots (.lrfpn files).

Layout, all integers little-endian:

  magic   7 bytes  b"LRFPN1\\n"
  count   u32      number of parameter records
  record  u32 name length, name utf-8 bytes,
          u8 dtype tag (0 = f64, 1 = f32),
          u8 rank, rank * u32 dims,
          raw row-major values

Saving the loaded values again reproduces the file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    CheckpointDtypeError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
)
from .tensor import Param

MAGIC = b"LRFPN1\n"
_TAG_OF = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_DTYPE_OF = {0: np.float64, 1: np.float32}


def dump_bytes(params: list[Param]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        tag = _TAG_OF.get(p.value.dtype)
        if tag is None:
            raise CheckpointDtypeError(f"cannot store dtype {p.value.dtype}")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<BB", tag, p.value.ndim))
        chunks.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        chunks.append(np.ascontiguousarray(p.value).tobytes())
    return b"".join(chunks)


def save_checkpoint(path, params: list[Param]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_bytes(params))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def parse_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"checkpoint does not start with {MAGIC!r}")
    r = _Reader(blob)
    r.pos = len(MAGIC)
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        tag = r.u8()
        if tag not in _DTYPE_OF:
            raise CheckpointDtypeError(f"unknown dtype tag {tag} for {name!r}")
        dtype = np.dtype(_DTYPE_OF[tag])
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = r.take(n_items * dtype.itemsize)
        out[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after the last record")
    return out


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_bytes(blob)


def load_into(params: list[Param], path) -> None:
    """Restore saved values into matching Params; everything must line up."""
    stored = load_checkpoint(path)
    have = {p.name for p in params}
    if have != set(stored):
        missing = sorted(have - set(stored))
        extra = sorted(set(stored) - have)
        raise CheckpointError(f"parameter names differ; missing={missing}, unexpected={extra}")
    for p in params:
        arr = stored[p.name]
        if arr.shape != p.value.shape or arr.dtype != p.value.dtype:
            raise CheckpointError(
                f"{p.name}: stored {arr.dtype}{arr.shape}, model has {p.value.dtype}{p.value.shape}"
            )
        p.value[...] = arr
