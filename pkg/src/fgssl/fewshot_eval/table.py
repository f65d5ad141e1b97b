"""Embedding tables and the ``PSSLEMB1`` file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, InvalidInputError

MAGIC = b"PSSLEMB1"
UNIT_TOL = 1e-6


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)
    normalized: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or len(self.vectors) < 1:
            raise InvalidInputError(f"embedding table needs an (M >= 1, d) matrix, got {self.vectors.shape}")
        if len(self.labels) != len(self.vectors):
            raise InvalidInputError("one label per embedding row required")
        if self.labels.min() < 0:
            raise InvalidInputError("class ids must be non-negative")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.vectors))]
        if len(self.ids) != len(self.vectors):
            raise InvalidInputError("one id per embedding row required")
        if not np.all(np.isfinite(self.vectors)):
            raise InvalidInputError("embeddings contain non-finite values")
        if self.normalized:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                raise InvalidInputError("table is flagged normalized but has rows that are not unit-norm")

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, idx) -> "EmbeddingTable":
        idx = np.asarray(idx, dtype=np.int64)
        return EmbeddingTable(self.vectors[idx], self.labels[idx], [self.ids[i] for i in idx], self.normalized)

    def unit_rows(self) -> np.ndarray:
        """Rows as float64 unit vectors (zero rows stay zero)."""
        v = self.vectors.astype(np.float64)
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        return v / np.where(norms > 0, norms, 1.0)

    def normalize(self) -> "EmbeddingTable":
        return EmbeddingTable(self.unit_rows().astype(np.float32), self.labels.copy(), list(self.ids), True)


def write_embeddings(path, table: EmbeddingTable) -> Path:
    """Little-endian: magic, ``d: u32``, ``M: u64``, then ``(u16 id length, id, u32 label, d x f32)`` records."""
    path = Path(path)
    vecs = np.ascontiguousarray(table.vectors, dtype="<f4")
    parts = [MAGIC, struct.pack("<IQ", table.dim, len(table))]
    for ident, label, row in zip(table.ids, table.labels, vecs):
        raw = ident.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidInputError(f"sample id too long: {ident[:40]}...")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<I", int(label)), row.tobytes()]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)
    return path


def read_embeddings(path) -> EmbeddingTable:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embedding file {path}: {exc}") from exc
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a PSSLEMB1 embedding file")
    try:
        d, m = struct.unpack_from("<IQ", buf, 8)
        off = 20
        ids, labels = [], []
        vecs = np.empty((m, d), dtype=np.float32)
        for i in range(m):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            ids.append(buf[off : off + n].decode("utf-8"))
            off += n
            (label,) = struct.unpack_from("<I", buf, off)
            off += 4
            labels.append(label)
            vecs[i] = np.frombuffer(buf, dtype="<f4", count=d, offset=off)
            off += 4 * d
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: truncated or corrupt embedding file ({exc})") from exc
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes after the last record")
    if m == 0:
        raise DataError(f"{path}: embedding file has no rows")
    norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
    return EmbeddingTable(vecs, np.asarray(labels), ids, bool(np.all(np.abs(norms - 1) <= UNIT_TOL)))


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.txt")


def write_manifest(path, rows: int, skipped: list[tuple[str, str]]) -> Path:
    """Plain-text sidecar: row count, then one ``skipped<TAB>path<TAB>reason`` line per skipped file."""
    out = manifest_path(path)
    lines = [f"embeddings\t{Path(path).name}", f"rows\t{rows}", f"skipped_count\t{len(skipped)}"]
    lines += [f"skipped\t{p}\t{' '.join(reason.split())}" for p, reason in skipped]
    out.write_text("\n".join(lines) + "\n")
    return out


def read_manifest(path) -> dict:
    rows, skipped = None, []
    for line in manifest_path(path).read_text().splitlines():
        parts = line.split("\t")
        if parts[0] == "rows":
            rows = int(parts[1])
        elif parts[0] == "skipped":
            skipped.append((parts[1], parts[2] if len(parts) > 2 else ""))
    return {"rows": rows, "skipped": skipped}
