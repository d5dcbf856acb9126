"""Binary weight checkpoints.

Layout (all integers little-endian)::

    b"SSAT1"
    u32 config_len, config_len bytes of UTF-8 JSON
    u32 n_arrays
    n_arrays times:
        u16 name_len, name_len bytes of UTF-8 name
        u8 ndim, ndim x u32 dims
        prod(dims) x f32 values (row-major)

Float32 arrays round-trip bit-exactly; the JSON block holds everything
else (widths, sigma, optimizer step counts, iteration).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SSAT1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    arrays: dict[str, np.ndarray]


def save(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` (cast to float32) and a JSON ``config`` to ``path``."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"array {name!r} is {arr.dtype}, checkpoints store float32 only")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an SSAT1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (n,) = take("<I")
        config = json.loads(data[pos : pos + n].decode("utf-8"))
        pos += n
        (count,) = take("<I")
        arrays = {}
        for _ in range(count):
            (n,) = take("<H")
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise CheckpointError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(data, "<f4", size, pos).astype(np.float32).reshape(shape)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(config, arrays)


def load_into(module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy named arrays into a module's parameters; names and shapes must match."""
    params = module.named_parameters()
    missing = [k for k in params if prefix + k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, p in params.items():
        arr = arrays[prefix + name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape}, model shape {p.shape}")
        p.data = arr.copy()
