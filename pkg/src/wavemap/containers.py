"""Binary containers for datasets (WPKD), fields (WPKF) and models (WPKM).

Layout, all integers little-endian::

    magic (4 bytes) | version u32 | metadata length u32 | metadata (UTF-8 JSON)
    array count u32 | per array: ndim u32, dims u64 * ndim, float64 data
    CRC-32 u32 of everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

VERSION = 1
DATASET_MAGIC = b"WPKD"
FIELD_MAGIC = b"WPKF"
MODEL_MAGIC = b"WPKM"


class ContainerError(ValueError):
    code = 0


class BadMagicError(ContainerError):
    code = 1


class VersionError(ContainerError):
    code = 2


class TruncatedError(ContainerError):
    code = 3


class SizeMismatchError(ContainerError):
    code = 4


class ChecksumError(ContainerError):
    code = 5


def canonical_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def pack(magic: bytes, meta: dict, arrays: Sequence[np.ndarray]) -> bytes:
    body = bytearray(magic)
    blob = canonical_json(meta)
    body += struct.pack("<II", VERSION, len(blob))
    body += blob
    body += struct.pack("<I", len(arrays))
    for arr in arrays:
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes, unlike ascontiguousarray
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes(order="C")
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    return bytes(body)


def unpack(data: bytes, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    if len(data) < 4 or data[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {bytes(data[:4])!r}")
    if len(data) < 16:
        raise TruncatedError("container shorter than its header")
    (crc,) = struct.unpack("<I", data[-4:])
    body = data[:-4]
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise TruncatedError("payload ends early")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionError(f"unsupported container version {version}")
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(body):
            raise SizeMismatchError(f"array of shape {shape} needs {nbytes} bytes, {len(body) - pos} left")
        arrays.append(np.frombuffer(take(nbytes), dtype="<f8").reshape(shape).astype(float))
    if pos != len(body):
        raise SizeMismatchError(f"{len(body) - pos} trailing bytes after the last array")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC-32 mismatch")
    return meta, arrays


def write(path: str | Path, magic: bytes, meta: dict, arrays: Sequence[np.ndarray]) -> bytes:
    blob = pack(magic, meta, arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return blob


def read(path: str | Path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    return unpack(Path(path).read_bytes(), magic)


def save_fields(path: str | Path, fields: Sequence[np.ndarray], meta: dict) -> bytes:
    """Snapshot dump in the WPKF container."""
    return write(path, FIELD_MAGIC, meta, fields)


def load_fields(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    return read(path, FIELD_MAGIC)
