"""In-memory write buffer: sorted keys, multi-version record lists."""

from __future__ import annotations

from bisect import bisect_left, insort
from collections import deque
from typing import Iterator

from .codec import KvRecord, newest_visible
from .errors import Sealed

RECORD_OVERHEAD = 32


class Memtable:
    """Sorted map ``key -> [KvRecord, ...]`` with records in ascending seq.

    Single writer; readers may run concurrently (list appends and inserts
    are atomic under the GIL and readers only slice).
    """

    def __init__(self, log_number: int | None = None):
        self._map: dict[bytes, list[KvRecord]] = {}
        self._keys: list[bytes] = []
        self.approx_bytes = 0
        self.sealed = False
        self.log_number = log_number
        self.max_seq = 0

    def __len__(self) -> int:
        return len(self._keys)

    def insert(self, key: bytes, rec: KvRecord) -> None:
        if self.sealed:
            raise Sealed("memtable is sealed")
        recs = self._map.get(key)
        if recs is None:
            self._map[key] = [rec]
            insort(self._keys, key)
        else:
            if rec.seq <= recs[-1].seq:
                raise ValueError(f"seq {rec.seq} not above {recs[-1].seq} for {key!r}")
            recs.append(rec)
        self.approx_bytes += len(key) + len(rec.value) + RECORD_OVERHEAD
        if rec.seq > self.max_seq:
            self.max_seq = rec.seq

    def get(self, key: bytes, snapshot_seq: int) -> KvRecord | None:
        recs = self._map.get(key)
        if recs is None:
            return None
        return newest_visible(recs, snapshot_seq)

    def range(
        self, lo: bytes, hi: bytes | None, snapshot_seq: int
    ) -> list[tuple[bytes, KvRecord]]:
        """Newest visible record per key in ``[lo, hi)``; ``hi=None`` is unbounded."""
        keys = self._keys
        i = bisect_left(keys, lo)
        j = len(keys) if hi is None else bisect_left(keys, hi)
        out = []
        for key in keys[i:j]:
            rec = newest_visible(self._map[key], snapshot_seq)
            if rec is not None:
                out.append((key, rec))
        return out

    def items(self) -> Iterator[tuple[bytes, list[KvRecord]]]:
        """All keys in ascending order with their full record lists."""
        for key in list(self._keys):
            yield key, list(self._map[key])

    def seal(self) -> "Memtable":
        self.sealed = True
        return self


class ImmutableQueue:
    """FIFO of sealed memtables awaiting minor compaction."""

    def __init__(self, capacity: int = 4):
        self.capacity = capacity
        self._q: deque[Memtable] = deque()

    def __len__(self) -> int:
        return len(self._q)

    @property
    def full(self) -> bool:
        return len(self._q) >= self.capacity

    def push(self, m: Memtable) -> None:
        if not m.sealed:
            raise ValueError("only sealed memtables may be queued")
        if self.full:
            raise OverflowError("immutable queue is full")
        self._q.append(m)

    def head(self) -> Memtable | None:
        return self._q[0] if self._q else None

    def pop(self) -> Memtable:
        return self._q.popleft()

    def newest_first(self) -> list[Memtable]:
        return list(reversed(self._q))
