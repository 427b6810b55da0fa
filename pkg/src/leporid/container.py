"""Binary "LEPO" container shared by embedding files and model checkpoints.

Layout (all integers little-endian)::

    magic  b"LEPO"
    version u8 (=1)
    flags   u8   bit 0: checkpoint (section table) instead of a single matrix
    n       u64  rows, or number of sections for checkpoints
    D       u64  columns (0 for checkpoints)
    payload
        matrix:     n*D float64 row-major, then n ids (u32 length + UTF-8)
        checkpoint: per section: name (u32 length + UTF-8), ndim u8,
                    ndim x u64 dims, prod(dims) float64
    provenance  u32 length + UTF-8 JSON
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"LEPO"
VERSION = 1
FLAG_CHECKPOINT = 0x01
_HEADER = struct.Struct("<4sBBQQ")


class ContainerError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ContainerError(f"{self.path}: truncated file")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ContainerError(f"{self.path}: invalid UTF-8 string") from None

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _provenance(prov: dict) -> bytes:
    return _text(json.dumps(prov, sort_keys=True))


def encode_matrix(values: np.ndarray, ids, provenance: dict) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    n, d = values.shape
    if len(ids) != n:
        raise ValueError("one id per row required")
    parts = [_HEADER.pack(MAGIC, VERSION, 0, n, d), values.tobytes()]
    parts.extend(_text(str(i)) for i in ids)
    parts.append(_provenance(provenance))
    return b"".join(parts)


def encode_checkpoint(sections: dict[str, np.ndarray], provenance: dict) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, FLAG_CHECKPOINT, len(sections), 0)]
    for name, arr in sections.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        parts.append(_text(name))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    parts.append(_provenance(provenance))
    return b"".join(parts)


def _open(data: bytes, path, want_checkpoint: bool) -> tuple[_Reader, int, int]:
    if len(data) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, flags, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    if bool(flags & FLAG_CHECKPOINT) != want_checkpoint:
        kind = "checkpoint" if want_checkpoint else "embedding matrix"
        raise ContainerError(f"{path}: not a {kind} file")
    reader = _Reader(data, path)
    reader.pos = _HEADER.size
    return reader, n, d


def _finish(reader: _Reader) -> dict:
    try:
        prov = json.loads(reader.text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{reader.path}: corrupt provenance ({exc})") from None
    if reader.pos != len(reader.data):
        raise ContainerError(f"{reader.path}: {len(reader.data) - reader.pos} trailing bytes")
    return prov


def decode_matrix(data: bytes, path="<bytes>"):
    reader, n, d = _open(data, path, want_checkpoint=False)
    values = reader.floats(n * d).reshape(n, d)
    ids = [reader.text() for _ in range(n)]
    return values, ids, _finish(reader)


def decode_checkpoint(data: bytes, path="<bytes>"):
    reader, count, _ = _open(data, path, want_checkpoint=True)
    sections = {}
    for _ in range(count):
        name = reader.text()
        ndim = reader.u8()
        shape = tuple(reader.u64() for _ in range(ndim))
        sections[name] = reader.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    return sections, _finish(reader)


def write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)


def read_bytes(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()
