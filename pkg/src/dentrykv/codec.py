"""Keys, records, and their on-disk encodings.

KV-file record layout (little-endian)::

    seq u64 | op u8 | value_len u32 | value | crc32c u32

The CRC covers every preceding byte of the record.  A KV file is a plain
concatenation of records in ascending ``seq`` order.

Filename encoding: bytes in ``[A-Za-z0-9_-+=@]`` pass through, every other
byte becomes ``%XX`` (uppercase hex).  ``.`` is never safe, so no encoded
name starts with a dot; ``.meta`` and friends are unreachable.  Encoded
names are limited to 255 bytes.  The encoding is not order-preserving:
anything that needs key order decodes first and sorts raw bytes.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

from .errors import Corrupt, EmptyKey, KeyTooLong, MalformedName
from .kernels import crc32c, decode_key_raw, encode_key_raw

PUT = 0
DELETE = 1

MAX_FILENAME = 255
MAX_VALUE = 2**32 - 1
MAX_SEQ = 2**64 - 1

_HDR = struct.Struct("<QBI")
_CRC = struct.Struct("<I")
RECORD_OVERHEAD = _HDR.size + _CRC.size  # 17


class KvRecord(NamedTuple):
    seq: int
    op: int
    value: bytes = b""

    @property
    def is_delete(self) -> bool:
        return self.op == DELETE


def compare_keys(a: bytes, b: bytes) -> int:
    """Bytewise lexicographic comparison: -1, 0 or 1."""
    return (a > b) - (a < b)


def encode_key(key: bytes) -> str:
    if not key:
        raise EmptyKey("keys must be non-empty")
    name = encode_key_raw(key)
    if len(name) > MAX_FILENAME:
        raise KeyTooLong(key, len(name), _shorten(key))
    return name


def _shorten(key: bytes) -> bytes:
    budget, out = MAX_FILENAME, bytearray()
    for b in key:
        cost = len(encode_key_raw(bytes([b])))
        if cost > budget:
            break
        out.append(b)
        budget -= cost
    return bytes(out)


def check_key(key: bytes) -> None:
    """Raise unless ``key`` is storable (non-empty, encodes within the limit)."""
    encode_key(key)


def decode_key(name: str) -> bytes:
    key = decode_key_raw(name)
    if key is None or len(name) > MAX_FILENAME:
        raise MalformedName(name)
    return key


def record_size(value_len: int) -> int:
    return RECORD_OVERHEAD + value_len


def encode_record(rec: KvRecord) -> bytes:
    if rec.op not in (PUT, DELETE):
        raise ValueError(f"invalid op code {rec.op}")
    if rec.op == DELETE and rec.value:
        raise ValueError("delete records carry no value")
    body = _HDR.pack(rec.seq, rec.op, len(rec.value)) + rec.value
    return body + _CRC.pack(crc32c(body))


def encode_records(records) -> bytes:
    return b"".join([encode_record(r) for r in records])


def decode_records(data: bytes) -> list[KvRecord]:
    """Decode a concatenation of records.

    Raises :class:`Corrupt` (carrying the valid prefix) on a checksum
    failure, an invalid op code, or a truncated tail.
    """
    out: list[KvRecord] = []
    pos, n = 0, len(data)
    mv = memoryview(data)
    while pos < n:
        if n - pos < RECORD_OVERHEAD:
            raise Corrupt(len(out), out, "(truncated header)")
        seq, op, vlen = _HDR.unpack_from(data, pos)
        end = pos + _HDR.size + vlen
        if end + 4 > n:
            raise Corrupt(len(out), out, "(truncated value)")
        (crc,) = _CRC.unpack_from(data, end)
        if crc != crc32c(mv[pos:end]) or op > DELETE or (op == DELETE and vlen):
            raise Corrupt(len(out), out, "(checksum)")
        out.append(KvRecord(seq, op, bytes(mv[pos + _HDR.size : end])))
        pos = end + 4
    return out


def decode_headers(data: bytes, size: int) -> list[tuple[int, int, int]] | None:
    """Walk ``(seq, op, value_len)`` headers without touching values.

    ``data`` must hold the file prefix read so far; returns ``None`` when a
    header beyond ``len(data)`` is needed (caller reads the whole file).
    """
    out = []
    pos = 0
    while pos < size:
        if pos + _HDR.size > len(data):
            return None
        seq, op, vlen = _HDR.unpack_from(data, pos)
        out.append((seq, op, vlen))
        pos += RECORD_OVERHEAD + vlen
    if pos != size:
        return None
    return out


def newest_visible(records, snapshot_seq: int) -> KvRecord | None:
    """The record with the greatest seq <= ``snapshot_seq`` from an ascending list."""
    for rec in reversed(records):
        if rec.seq <= snapshot_seq:
            return rec
    return None
