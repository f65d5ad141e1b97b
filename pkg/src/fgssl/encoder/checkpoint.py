"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"PSSLCKPT"
    u32 version
    u32 config length, config as UTF-8 JSON (sorted keys)
    u32 tensor count
    per tensor: u16 name length, name (UTF-8), u32 rank, rank x u32 dims,
                prod(dims) x f32 payload

Student and teacher parameters are stored under ``student/`` and ``teacher/``
prefixes; optimiser moments under ``optim/``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .vit import EncoderConfig, EncoderParams

MAGIC = b"PSSLCKPT"
VERSION = 1


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", buf, off)
    off += 4
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    config = json.loads(buf[off : off + n].decode("utf-8"))
    off += n
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) * 4
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=off).reshape(dims).astype(np.float32)
        off += size
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes")
    return config, tensors


def prefixed(prefix: str, tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in tensors.items()}


def unprefixed(prefix: str, tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}


def load_encoder(path, which: str = "teacher") -> EncoderParams:
    """Load one network from a checkpoint (falls back to the student if no teacher)."""
    config, tensors = load_checkpoint(path)
    enc = EncoderConfig.from_dict(config["encoder"])
    params = unprefixed(which, tensors) or unprefixed("student", tensors)
    out = EncoderParams(enc, params)
    out.check()
    return out
