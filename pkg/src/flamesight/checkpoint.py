"""Binary checkpoint format for model weights and class prototypes.

Layout (all integers little-endian):

    magic       4 bytes   b"FFCK"
    version     u16       currently 1
    n_tensors   u32
    per tensor:
        name_len  u16
        name      UTF-8 bytes
        dtype     u8        0 = float64 (the only defined code)
        rank      u8
        dims      rank x u32
    payloads: raw little-endian float64 bytes, C order, in header order.

Model weights are stored under their tensor names, prototypes under
``proto.flame`` / ``proto.noflame``, and the shape configuration under
rank-0 ``meta.*`` tensors so a checkpoint is self-describing. Files are
written atomically; loading validates magic, version, and payload length
and round-trips every tensor bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dml import PrototypePair
from .errors import CorruptCheckpoint
from .model import ModelParams
from .util import atomic_write_bytes

MAGIC = b"FFCK"
VERSION = 1
_DTYPE_F64 = 0

_META_FIELDS = ("c_d", "c_f", "patch_size", "n_layers", "rng_seed")


def _pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    header = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(tensors))]
    payload = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)))
        header.append(encoded)
        header.append(struct.pack("<BB", _DTYPE_F64, arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes())
    return b"".join(header) + b"".join(payload)


def _unpack_tensors(raw: bytes) -> dict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise CorruptCheckpoint(f"bad magic {raw[:4]!r}")
    if len(raw) < 10:
        raise CorruptCheckpoint("truncated header")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported version {version}")
    (count,) = struct.unpack_from("<I", raw, 6)
    pos = 10
    entries = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            dtype, rank = struct.unpack_from("<BB", raw, pos)
            pos += 2
            if dtype != _DTYPE_F64:
                raise CorruptCheckpoint(f"{name}: unknown dtype code {dtype}")
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            entries.append((name, dims))
    except struct.error as exc:
        raise CorruptCheckpoint("truncated header") from exc
    tensors = {}
    for name, dims in entries:
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = n * 8
        if len(raw) - pos < nbytes:
            raise CorruptCheckpoint(f"{name}: payload truncated")
        tensors[name] = np.frombuffer(raw[pos:pos + nbytes], dtype="<f8").reshape(dims).copy()
        pos += nbytes
    if pos != len(raw):
        raise CorruptCheckpoint(f"{len(raw) - pos} trailing bytes")
    return tensors


def save_checkpoint(path: str | Path, params: ModelParams, protos: PrototypePair) -> None:
    tensors: dict[str, np.ndarray] = dict(params.tensors)
    tensors["proto.flame"] = protos.c_flame
    tensors["proto.noflame"] = protos.c_noflame
    for name in _META_FIELDS:
        tensors[f"meta.{name}"] = np.float64(getattr(params, name))
    atomic_write_bytes(path, _pack_tensors(tensors))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, PrototypePair]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    tensors = _unpack_tensors(raw)
    try:
        meta = {name: int(tensors.pop(f"meta.{name}")) for name in _META_FIELDS}
        protos = PrototypePair(
            c_flame=tensors.pop("proto.flame"),
            c_noflame=tensors.pop("proto.noflame"),
        )
    except KeyError as exc:
        raise CorruptCheckpoint(f"missing tensor {exc}") from exc
    params = ModelParams(tensors=tensors, **{
        "c_d": meta["c_d"],
        "c_f": meta["c_f"],
        "patch_size": meta["patch_size"],
        "n_layers": meta["n_layers"],
        "rng_seed": meta["rng_seed"],
    })
    return params, protos
