"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ATCK" | u32 version | u32 segment count | segments...

    segment: u32 name length | name (utf-8) | u8 kind | u32 ndim |
             u64 dims[ndim] | u64 payload bytes | payload

Kind 0 holds float64 little-endian values in row-major order; kind 1 holds a
UTF-8 JSON document (run configuration and schema). Segments are written in
sorted name order, so equal state always gives byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError

MAGIC = b"ATCK"
VERSION = 1
KIND_F64 = 0
KIND_JSON = 1


def write_segments(path: str | Path, arrays: dict[str, np.ndarray], documents: dict[str, dict] | None = None) -> None:
    documents = documents or {}
    names = sorted(set(arrays) | set(documents))
    if len(names) != len(arrays) + len(documents):
        raise ValueError("segment names must be unique across arrays and documents")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)) + raw_name)
        if name in arrays:
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            payload = arr.tobytes()
            chunks.append(struct.pack("<BI", KIND_F64, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        else:
            payload = json.dumps(documents[name], sort_keys=True).encode("utf-8")
            chunks.append(struct.pack("<BI", KIND_JSON, 0))
        chunks.append(struct.pack("<Q", len(payload)) + payload)
    Path(path).write_bytes(b"".join(chunks))


def read_segments(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, dict]]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CorruptCheckpointError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic bytes")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {version}")
    arrays: dict[str, np.ndarray] = {}
    documents: dict[str, dict] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptCheckpointError(f"{path}: undecodable segment name") from None
        kind, ndim = struct.unpack("<BI", take(5))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        (size,) = struct.unpack("<Q", take(8))
        payload = take(size)
        if kind == KIND_F64:
            expected = 8 * int(np.prod(shape, dtype=np.int64))
            if size != expected:
                raise CorruptCheckpointError(f"{path}: segment {name!r} holds {size} bytes, shape needs {expected}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        elif kind == KIND_JSON:
            try:
                documents[name] = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise CorruptCheckpointError(f"{path}: segment {name!r} is not valid JSON") from None
        else:
            raise CorruptCheckpointError(f"{path}: segment {name!r} has unknown kind {kind}")
    if pos != len(data):
        raise CorruptCheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays, documents
