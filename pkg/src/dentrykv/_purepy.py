"""Pure-Python implementations of the hot kernels.

Used when the compiled ``_speedups`` extension is unavailable or when
``DENTRYKV_PURE_PYTHON=1`` is set.  Every function here must return
results bit-identical to its compiled twin.
"""

from __future__ import annotations

import re

_CRC32C_POLY = 0x82F63B78
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _make_crc_table() -> list[int]:
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ _CRC32C_POLY if c & 1 else c >> 1
        table.append(c)
    return table


_CRC_TABLE = _make_crc_table()


def crc32c(data, crc: int = 0) -> int:
    """CRC32C (Castagnoli), reflected, init/xorout 0xFFFFFFFF; chainable."""
    table = _CRC_TABLE
    c = crc ^ 0xFFFFFFFF
    for b in bytes(data):
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


def fnv1a64(data) -> int:
    h = FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def _bloom_hashes(key: bytes) -> tuple[int, int]:
    h1 = fnv1a64(key)
    h2 = fnv1a64(key + b"\xff") | 1
    return h1, h2


def bloom_add(bits: bytearray, m: int, k: int, key: bytes) -> None:
    h1, h2 = _bloom_hashes(key)
    for i in range(k):
        pos = ((h1 + i * h2) & _MASK64) % m
        bits[pos >> 3] |= 1 << (pos & 7)


def bloom_query(bits, m: int, k: int, key: bytes) -> bool:
    h1, h2 = _bloom_hashes(key)
    for i in range(k):
        pos = ((h1 + i * h2) & _MASK64) % m
        if not bits[pos >> 3] & (1 << (pos & 7)):
            return False
    return True


_SAFE = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-+=@")
_ENC = [chr(b) if b in _SAFE else "%%%02X" % b for b in range(256)]
_ALL_SAFE = re.compile(rb"[A-Za-z0-9_\-+=@]+")
_VALID_NAME = re.compile(r"(?:[A-Za-z0-9_\-+=@]|%[0-9A-F]{2})+")


def encode_key(key: bytes) -> str:
    """Percent-encode ``key`` into a filename.  Length checks live in codec."""
    if _ALL_SAFE.fullmatch(key):
        return key.decode("ascii")
    return "".join([_ENC[b] for b in key])


def decode_key(name: str) -> bytes | None:
    """Inverse of :func:`encode_key`; ``None`` for any non-canonical name."""
    if not _VALID_NAME.fullmatch(name):
        return None
    if "%" not in name:
        return name.encode("ascii")
    out = bytearray()
    i, n = 0, len(name)
    while i < n:
        ch = name[i]
        if ch == "%":
            b = int(name[i + 1 : i + 3], 16)
            if b in _SAFE:
                return None
            out.append(b)
            i += 3
        else:
            out.append(ord(ch))
            i += 1
    return bytes(out)
