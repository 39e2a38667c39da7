"""Binary checkpoint format.

Layout (little endian): ``b"GDPP"``, version byte ``1``, u32 tensor count, then
per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 extents and the
row-major float64 payload.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAGIC = b"GDPP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BI", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8").copy(order="C")  # keeps 0-d arrays 0-d
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def decode(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    version, count = take("<BI")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = take("<B")
        shape = take(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        if pos + 8 * n > len(view):
            raise CheckpointError(f"truncated payload for {name}")
        arr = np.frombuffer(view, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
        out[name] = arr
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def state_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy() for name, p in module.named_parameters()}


def save(module: nn.Module, path) -> None:
    Path(path).write_bytes(encode(state_arrays(module)))


def load_into(module: nn.Module, path) -> None:
    arrays = decode(Path(path).read_bytes())
    params = dict(module.named_parameters())
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"name mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
    with torch.no_grad():
        for name, p in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: shape {arr.shape} != {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
