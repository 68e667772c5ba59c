"""Binary bundle of named float64 tensors plus a JSON metadata block.

Layout (all integers little-endian)::

    magic      4 bytes   b"DRCK"
    version    u32
    kind_len   u16, kind (utf-8)
    meta_len   u64, meta (utf-8 JSON)
    count      u64
    count x:   name_len u16, name, ndim u8, dims u64 * ndim, data <f8 * prod(dims)

Values use the same little-endian float64 encoding as parameter-vector files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"DRCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(kind: str, meta: dict, tensors: Dict[str, np.ndarray]) -> bytes:
    kind_b = kind.encode("utf-8")
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<H", len(kind_b)), kind_b,
             struct.pack("<Q", len(meta_b)), meta_b, struct.pack("<Q", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def save(path: Union[str, Path], kind: str, meta: dict, tensors: Dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, meta, tensors))


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def loads(raw: bytes, source: str = "<bytes>", expect_kind: str = None) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    r = _Reader(raw, source)
    if len(raw) < 4 or r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: bad checkpoint header (magic mismatch)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (kind_len,) = r.unpack("<H")
    kind = r.take(kind_len).decode("utf-8")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{source}: expected a {expect_kind!r} checkpoint, found {kind!r}")
    (meta_len,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt checkpoint metadata") from exc
    (count,) = r.unpack("<Q")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(raw):
        raise CheckpointError(f"{source}: trailing bytes after last tensor")
    return kind, meta, tensors


def load(path: Union[str, Path], expect_kind: str = None) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return loads(raw, str(path), expect_kind)
