"""FNV-1a 64-bit hashing (run ids, provenance digests)."""
from __future__ import annotations

from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    from .kernels import fnv1a64 as _impl

    return _impl(data)


def fnv1a64_hex(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"


def file_digest(path) -> str:
    return fnv1a64_hex(Path(path).read_bytes())
