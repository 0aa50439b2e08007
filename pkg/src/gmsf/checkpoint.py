"""Binary checkpoint format.

Layout (little-endian)::

    b"GMSF" | version u32 | sha256(config json) [32 bytes]
    config json length u32 | config json utf-8
    tensor count u32
    per tensor: path length u32 | path utf-8 | dtype tag u8 | rank u32 |
                dims u32[rank] | payload
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, ChecksumError, FormatError, TruncatedError,
                     VersionError)

MAGIC = b"GMSF"
VERSION = 1

DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("<u8"),
    4: np.dtype("u1"),
}
_TAGS = {dt.newbyteorder("="): tag for tag, dt in DTYPES.items()}

_U32 = struct.Struct("<I")


def encode(config_json: str, tensors: dict[str, np.ndarray]) -> bytes:
    cfg = config_json.encode()
    parts = [MAGIC, _U32.pack(VERSION), hashlib.sha256(cfg).digest(),
             _U32.pack(len(cfg)), cfg, _U32.pack(len(tensors))]
    for path, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        tag = _TAGS.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for {path}")
        name = path.encode()
        parts += [_U32.pack(len(name)), name, bytes([tag]), _U32.pack(arr.ndim)]
        parts += [_U32.pack(dim) for dim in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    """Return ``(config_json, tensors)``; raises a FormatError subclass."""
    if len(blob) < 4 + 4 + 32 + 4 + 4:
        raise TruncatedError("checkpoint shorter than its header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = _U32.unpack_from(blob, 4)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (crc,) = _U32.unpack_from(blob, len(blob) - 4)
    body = blob[:-4]
    if zlib.crc32(body) != crc:
        # a truncated file almost never ends in a matching crc
        raise ChecksumError("checkpoint checksum mismatch (corrupt or truncated)")

    off = 8
    digest = body[off:off + 32]
    off += 32

    def u32():
        nonlocal off
        if off + 4 > len(body):
            raise TruncatedError("checkpoint ended inside a record")
        (val,) = _U32.unpack_from(body, off)
        off += 4
        return val

    def take(n):
        nonlocal off
        if off + n > len(body):
            raise TruncatedError("checkpoint ended inside a record")
        chunk = body[off:off + n]
        off += n
        return chunk

    cfg = take(u32())
    if hashlib.sha256(cfg).digest() != digest:
        raise FormatError("config hash does not match the stored config")
    tensors = {}
    for _ in range(u32()):
        path = take(u32()).decode()
        tag = take(1)[0]
        if tag not in DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {path}")
        dims = tuple(u32() for _ in range(u32()))
        dt = DTYPES[tag]
        count = int(np.prod(dims, dtype=np.int64))
        raw = take(count * dt.itemsize)
        tensors[path] = np.frombuffer(raw, dtype=dt).reshape(dims).astype(
            dt.newbyteorder("="))
    if off != len(body):
        raise FormatError("trailing bytes after the last tensor record")
    return cfg.decode(), tensors


def save(path, config_json: str, tensors: dict) -> None:
    Path(path).write_bytes(encode(config_json, tensors))


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
