"""Write-ahead log.

One log per memtable, named ``<number:06>.log`` at the database root.
Record layout (little-endian)::

    crc32c u32 | payload_len u32 | payload
    payload = seq u64 | op u8 | key_len u32 | key | value_len u32 | value

The CRC covers the payload.  Replay returns the longest valid prefix; a bad
checksum or a torn tail ends the replay without raising.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

from .errors import Sealed
from .kernels import crc32c
from .storage import AppendFile, StoreRoot

_FRAME = struct.Struct("<II")
_SEQOP = struct.Struct("<QBI")
_U32 = struct.Struct("<I")


def wal_name(number: int) -> str:
    return f"{number:06d}.log"


def parse_wal_name(name: str) -> int | None:
    if name.endswith(".log") and name[:-4].isdigit():
        return int(name[:-4])
    return None


def encode_wal_record(seq: int, op: int, key: bytes, value: bytes) -> bytes:
    payload = b"".join(
        (_SEQOP.pack(seq, op, len(key)), key, _U32.pack(len(value)), value)
    )
    return _FRAME.pack(crc32c(payload), len(payload)) + payload


class WalFile:
    def __init__(self, root: StoreRoot, number: int, per_write_sync: bool = False):
        self.root = root
        self.file_number = number
        self.per_write_sync = per_write_sync
        self.sealed = False
        self.synced = False
        self._f: AppendFile | None = root.open_append(wal_name(number), "wal")

    @property
    def rel(self) -> str:
        return wal_name(self.file_number)

    def append(self, seq: int, op: int, key: bytes, value: bytes) -> None:
        if self.sealed or self._f is None:
            raise Sealed(f"log {self.file_number} is sealed")
        self._f.append(encode_wal_record(seq, op, key, value))
        self.synced = False
        if self.per_write_sync:
            self._f.sync()
            self.synced = True

    def seal_and_sync(self) -> None:
        """Sync, then mark sealed.  On sync failure the log stays open."""
        if self.sealed:
            return
        if self._f is None:
            raise Sealed(f"log {self.file_number} is closed")
        self._f.sync()
        self.synced = True
        self.sealed = True
        self._f.close()
        self._f = None

    def close(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None

    @property
    def size(self) -> int:
        return self._f.size if self._f is not None else self.root.file_size(self.rel)


def decode_wal(data: bytes) -> list[tuple[int, int, bytes, bytes]]:
    out = []
    pos, n = 0, len(data)
    mv = memoryview(data)
    while pos + _FRAME.size <= n:
        crc, plen = _FRAME.unpack_from(data, pos)
        start = pos + _FRAME.size
        end = start + plen
        if end > n or plen < _SEQOP.size + 4:
            break
        payload = mv[start:end]
        if crc32c(payload) != crc:
            break
        seq, op, klen = _SEQOP.unpack_from(payload, 0)
        kend = _SEQOP.size + klen
        if kend + 4 > plen or op > 1:
            break
        (vlen,) = _U32.unpack_from(payload, kend)
        if kend + 4 + vlen != plen:
            break
        out.append((seq, op, bytes(payload[_SEQOP.size:kend]), bytes(payload[kend + 4:])))
        pos = end
    return out


def wal_replay(root: StoreRoot, number: int) -> list[tuple[int, int, bytes, bytes]]:
    """Records ``(seq, op, key, value)`` from the valid prefix of a log."""
    return decode_wal(root.read_file(wal_name(number)))


@dataclass
class LogRetirer:
    """Keeps synced logs around for a grace period after their flush."""

    root: StoreRoot
    grace_seconds: float = 60.0
    pending: dict[int, float] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def schedule(self, number: int, done_at: float) -> None:
        with self._lock:
            self.pending[number] = done_at + self.grace_seconds

    def retire(self, number: int, now: float) -> bool:
        with self._lock:
            deadline = self.pending.get(number)
            if deadline is None or now < deadline:
                return False
            del self.pending[number]
        if self.root.exists(wal_name(number)):
            self.root.remove(wal_name(number))
        return True

    def retire_due(self, now: float) -> list[int]:
        with self._lock:
            due = [n for n, t in self.pending.items() if now >= t]
        return [n for n in due if self.retire(n, now)]
