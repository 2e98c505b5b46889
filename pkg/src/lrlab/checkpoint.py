"""The ``LRCK`` binary container.

Layout: 4-byte magic ``LRCK``, u32 LE version, u32 LE header length, UTF-8
JSON header, then a little-endian float32 blob. The header carries
``blob_bytes`` so truncation and header/blob disagreement are told apart.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, MagicError, TruncatedError, VersionError

MAGIC = b"LRCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_container(path, header: dict, arrays) -> Path:
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    header = dict(header, blob_bytes=len(blob))
    hbytes = canonical_json(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)
    return path


def read_container(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise TruncatedError(f"{path}: file shorter than the container prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise MagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"{path}: container version {version}, this build reads {VERSION}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise TruncatedError(f"{path}: header runs past end of file")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConsistencyError(f"{path}: unreadable header ({exc})") from None
    blob = raw[start:]
    expected = header.get("blob_bytes")
    if not isinstance(expected, int) or expected % 4:
        raise ConsistencyError(f"{path}: header has no valid blob_bytes")
    if len(blob) < expected:
        raise TruncatedError(f"{path}: blob has {len(blob)} bytes, header promises {expected}")
    if len(blob) > expected:
        raise ConsistencyError(f"{path}: {len(blob) - expected} trailing bytes after blob")
    count = header.get("param_count")
    if count is not None and count * 4 != expected:
        raise ConsistencyError(f"{path}: param_count {count} disagrees with blob of {expected} bytes")
    return header, np.frombuffer(blob, dtype="<f4").astype(np.float32)


def split_blob(blob: np.ndarray, shapes) -> list[np.ndarray]:
    out, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        out.append(blob[offset:offset + n].reshape(shape).copy())
        offset += n
    if offset != blob.size:
        raise ConsistencyError(f"parameter shapes cover {offset} values, blob holds {blob.size}")
    return out
