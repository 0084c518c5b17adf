"""Versioned, checksummed binary container shared by the TCWT and TCVX formats.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic (ASCII)
    4       4     format version (u32)
    8       8     body length in bytes (u64)
    16      4     CRC-32 of bytes 0..15
    20      n     body
    20+n    32    SHA-256 of bytes 0..20+n

The header CRC is verified before anything else is interpreted, so a damaged
magic or length field reports a checksum failure rather than a misleading
format error.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

HEADER = struct.Struct("<4sIQ")
HEADER_SIZE = HEADER.size + 4
DIGEST_SIZE = 32


class FormatError(ValueError):
    """File is structurally not what the reader expected."""


class ChecksumError(FormatError):
    """Stored checksum does not match the file contents."""


class TruncatedFileError(FormatError):
    """File ends before the length declared in its header."""


def pack(magic: bytes, version: int, body: bytes) -> bytes:
    head = HEADER.pack(magic, version, len(body))
    head += struct.pack("<I", zlib.crc32(head))
    data = head + body
    return data + hashlib.sha256(data).digest()


def unpack(data: bytes, magic: bytes, versions: tuple[int, ...] = (1,)) -> tuple[int, bytes]:
    """Validate a container and return ``(version, body)``."""
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header")
    (crc,) = struct.unpack_from("<I", data, HEADER.size)
    if zlib.crc32(data[: HEADER.size]) != crc:
        raise ChecksumError("header checksum mismatch")
    found, version, length = HEADER.unpack_from(data)
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}")
    if version not in versions:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    expected = HEADER_SIZE + length + DIGEST_SIZE
    if len(data) < expected:
        raise TruncatedFileError(f"file is {len(data)} bytes, header declares {expected}")
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} unexpected trailing bytes")
    body_end = HEADER_SIZE + length
    if hashlib.sha256(data[:body_end]).digest() != data[body_end:]:
        raise ChecksumError("payload checksum mismatch")
    return version, data[HEADER_SIZE:body_end]


def pack_json_and_arrays(meta: dict, arrays: list[np.ndarray]) -> bytes:
    """Body = u32 JSON length, canonical JSON, then raw little-endian arrays."""
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<I", len(text)), text]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def split_json(body: bytes) -> tuple[dict, memoryview]:
    if len(body) < 4:
        raise FormatError("body too short for metadata")
    (n,) = struct.unpack_from("<I", body)
    if 4 + n > len(body):
        raise FormatError("metadata length exceeds body")
    try:
        meta = json.loads(body[4 : 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from exc
    return meta, memoryview(body)[4 + n :]


def write_file(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_file(path) -> bytes:
    return Path(path).read_bytes()
