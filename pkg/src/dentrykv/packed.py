"""Conventional packed-SST baseline format.

Every table is one file ``L<level>/<number:06>.sst``::

    data   : per key, its KV records back to back (same wire format as KV files)
    index  : per key, key_len u32 | key | offset u64 | length u32
    bloom  : bit array
    footer : "PKS1" | entry_count u64 | index_off u64 | bloom_off u64
             | bloom_m u64 | bloom_k u32 | crc32c u32

The footer CRC covers the index, the bloom bits and the footer fields before
it.  Compaction rewrites every surviving record into new files, which is the
I/O profile the dentry format is compared against.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterator

from .bloom import MIN_BITS, BloomFilter
from .cache import LRUCache
from .codec import DELETE, KvRecord, decode_records, encode_records, newest_visible
from .compaction import OutputSet, merge_sorted_inputs, retained, should_drop_tombstone
from .errors import Corrupt
from .kernels import bloom_add, crc32c
from .storage import StoreRoot
from .version import CompactionJob, SstDirHandle, Version

MAGIC = b"PKS1"
_FOOTER = struct.Struct("<4sQQQQII")
_IDX = struct.Struct("<QI")
_U32 = struct.Struct("<I")


def sst_rel(level: int, number: int) -> str:
    return f"L{level}/{number:06d}.sst"


@dataclass
class PackedIndex:
    keys: list[bytes]
    offsets: list[int]
    lengths: list[int]
    bloom: BloomFilter


class PackedBuilder:
    def __init__(self, root: StoreRoot, level: int, number: int, bits_per_key: int, num_hashes: int):
        self.root = root
        self.level = level
        self.dir_no = number
        self.bits_per_key = bits_per_key
        self.num_hashes = num_hashes
        self.keys: list[bytes] = []
        self._chunks: list[bytes] = []
        self._index: list[bytes] = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self.keys)

    def add_records(self, key: bytes, records) -> None:
        if self.keys and key <= self.keys[-1]:
            raise ValueError("keys must ascend")
        blob = encode_records(records)
        self.keys.append(key)
        self._index.append(_U32.pack(len(key)) + key + _IDX.pack(self._pos, len(blob)))
        self._chunks.append(blob)
        self._pos += len(blob)

    def finish(self):
        keys = self.keys
        m = max(MIN_BITS, len(keys) * self.bits_per_key) if keys else 0
        bits = bytearray((m + 7) // 8)
        for key in keys:
            bloom_add(bits, m, self.num_hashes, key)
        index = b"".join(self._index)
        index_off = self._pos
        bloom_off = index_off + len(index)
        head = _FOOTER.pack(MAGIC, len(keys), index_off, bloom_off, m, self.num_hashes, 0)[:-4]
        crc = crc32c(index + bytes(bits) + head)
        blob = b"".join(self._chunks) + index + bytes(bits) + head + _U32.pack(crc)
        self.root.write_file(sst_rel(self.level, self.dir_no), blob, "sst")
        return _Meta(len(keys), keys[0] if keys else b"", keys[-1] if keys else b"")


@dataclass
class _Meta:
    entry_count: int
    smallest_key: bytes
    largest_key: bytes


def read_index(root: StoreRoot, level: int, number: int) -> PackedIndex:
    rel = sst_rel(level, number)
    tail, size = root.read_range(rel, max(0, root.file_size(rel) - _FOOTER.size), _FOOTER.size)
    if len(tail) != _FOOTER.size:
        raise Corrupt(0, where=f"({rel}: short footer)")
    magic, count, index_off, bloom_off, m, k, crc = _FOOTER.unpack(tail)
    if magic != MAGIC or not index_off <= bloom_off <= size - _FOOTER.size:
        raise Corrupt(0, where=f"({rel}: bad footer)")
    region, _ = root.read_range(rel, index_off, size - _FOOTER.size - index_off)
    if crc32c(region + tail[:-4]) != crc:
        raise Corrupt(0, where=f"({rel}: footer checksum)")
    bits = bytearray(region[bloom_off - index_off :])
    keys, offsets, lengths = [], [], []
    pos, end = 0, bloom_off - index_off
    while pos < end:
        (kl,) = _U32.unpack_from(region, pos)
        keys.append(bytes(region[pos + 4 : pos + 4 + kl]))
        off, ln = _IDX.unpack_from(region, pos + 4 + kl)
        offsets.append(off)
        lengths.append(ln)
        pos += 4 + kl + _IDX.size
    if len(keys) != count:
        raise Corrupt(0, where=f"({rel}: index count)")
    return PackedIndex(keys, offsets, lengths, BloomFilter(m, k, bits))


def read_all(root: StoreRoot, level: int, number: int) -> list[tuple[bytes, list[KvRecord]]]:
    """Every ``(key, records)`` of a table, reading the file once."""
    rel = sst_rel(level, number)
    idx = read_index(root, level, number)
    data, _ = root.read_range(rel, 0, idx.offsets[-1] + idx.lengths[-1] if idx.keys else 0)
    return [(k, decode_records(data[o : o + n])) for k, o, n in zip(idx.keys, idx.offsets, idx.lengths)]


class PackedFormat:
    kind = "packed"

    def __init__(self, root: StoreRoot, config):
        self.root = root
        self.config = config
        self.handles: LRUCache[PackedIndex] = LRUCache(config.handle_cache_entries)
        self.values: LRUCache[tuple[KvRecord, ...]] = LRUCache(
            config.value_cache_bytes, lambda recs: 64 + sum(len(r.value) + 32 for r in recs)
        )

    def table_rel(self, level: int, number: int) -> str:
        return sst_rel(level, number)

    def _builder(self, level: int, number: int) -> PackedBuilder:
        return PackedBuilder(self.root, level, number, self.config.bloom_bits_per_key, self.config.bloom_num_hashes)

    def write_table(self, level: int, number: int, items) -> SstDirHandle:
        b = self._builder(level, number)
        for key, records in items:
            b.add_records(key, records)
        self.root.faults.point("minor:before_meta")
        meta = b.finish()
        return SstDirHandle(level, number, meta.smallest_key, meta.largest_key, meta.entry_count)

    def index(self, h: SstDirHandle) -> PackedIndex:
        idx = self.handles.get(h.dir_no)
        if idx is None:
            idx = read_index(self.root, h.level, h.dir_no)
            self.handles.put(h.dir_no, idx)
        return idx

    def verify(self, h: SstDirHandle) -> None:
        self.index(h)

    def lookup(self, h: SstDirHandle, key: bytes, snapshot_seq: int) -> KvRecord | None:
        ck = (h.dir_no, key)
        recs = self.values.get(ck)
        if recs is None:
            idx = self.index(h)
            if not idx.bloom.may_contain(key):
                return None
            i = bisect_left(idx.keys, key)
            if i == len(idx.keys) or idx.keys[i] != key:
                return None
            data, _ = self.root.read_range(sst_rel(h.level, h.dir_no), idx.offsets[i], idx.lengths[i])
            recs = tuple(decode_records(data))
            self.values.put(ck, recs)
        return newest_visible(recs, snapshot_seq)

    def scan_entries(
        self, h: SstDirHandle, lo: bytes, hi: bytes | None
    ) -> Iterator[tuple[bytes, Callable[[], list[KvRecord]]]]:
        idx = self.index(h)
        i = bisect_left(idx.keys, lo)
        j = len(idx.keys) if hi is None else bisect_left(idx.keys, hi)
        rel = sst_rel(h.level, h.dir_no)
        root = self.root
        for n in range(i, j):

            def load(o=idx.offsets[n], ln=idx.lengths[n]):
                return decode_records(root.read_range(rel, o, ln)[0])

            yield idx.keys[n], load

    def table_records(self, h: SstDirHandle) -> Iterator[tuple[bytes, list[KvRecord]]]:
        yield from read_all(self.root, h.level, h.dir_no)

    def compact(self, job: CompactionJob, v: Version, alloc: Callable[[], int]) -> list[SstDirHandle]:
        out_level = job.output_level
        streams = [read_all(self.root, h.level, h.dir_no) for h in job.inputs]
        faults = self.root.faults
        outs = OutputSet(
            lambda no: self._builder(out_level, no),
            alloc,
            self.config.sstdir_file_target,
            lambda _b: faults.point("major:after_output_dir"),
        )
        first = True
        for key, group in merge_sorted_inputs(streams):
            keep = retained([r for _, recs in group for r in recs], job.snapshot_floor)
            if len(keep) == 1 and keep[0].op == DELETE and should_drop_tombstone(key, out_level, v):
                continue
            outs.builder().add_records(key, keep)
            if first:
                first = False
                faults.point("major:after_first_entry")
        return outs.finish()

    def remove_table(self, h: SstDirHandle) -> None:
        rel = sst_rel(h.level, h.dir_no)
        if self.root.exists(rel):
            self.root.remove(rel)
        self.invalidate({h.dir_no})

    def invalidate(self, numbers: set[int]) -> None:
        self.handles.invalidate_if(lambda k: k in numbers)
        self.values.invalidate_if(lambda k: k[0] in numbers)
