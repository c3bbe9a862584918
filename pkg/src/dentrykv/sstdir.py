"""SST directories: one KV file per key plus a ``.meta`` file.

Layout: ``L<level>/<dir_no:06>/{.meta, <encoded-key>, ...}``.

``.meta`` (little-endian)::

    "DLM1" | entry_count u64 | bits_per_key u32 | num_hashes u32 | bit_len u64
    | bits[ceil(bit_len/8)] | smallest_len u32 | smallest | largest_len u32
    | largest | crc32c u32 (over everything before it)

An empty directory stores ``bit_len = 0`` (no filter) and empty keys.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

from .bloom import DEFAULT_BITS_PER_KEY, DEFAULT_NUM_HASHES, MIN_BITS, BloomFilter
from .codec import KvRecord, decode_key, decode_records, encode_key, encode_records, newest_visible
from .errors import Corrupt, DirExists
from .kernels import bloom_add, crc32c
from .storage import StoreRoot

META_NAME = ".meta"
MAGIC = b"DLM1"
_HEAD = struct.Struct("<4sQIIQ")
_U32 = struct.Struct("<I")


def dir_rel(level: int, dir_no: int) -> str:
    return f"L{level}/{dir_no:06d}"


@dataclass
class SstDirMeta:
    entry_count: int
    bits_per_key: int
    num_hashes: int
    bloom: BloomFilter
    smallest_key: bytes
    largest_key: bytes

    def encode(self) -> bytes:
        body = b"".join(
            (
                _HEAD.pack(MAGIC, self.entry_count, self.bits_per_key, self.num_hashes, self.bloom.m),
                bytes(self.bloom.bits),
                _U32.pack(len(self.smallest_key)),
                self.smallest_key,
                _U32.pack(len(self.largest_key)),
                self.largest_key,
            )
        )
        return body + _U32.pack(crc32c(body))

    @classmethod
    def decode(cls, data: bytes) -> "SstDirMeta":
        try:
            if len(data) < _HEAD.size + 12:
                raise ValueError("short")
            (crc,) = _U32.unpack_from(data, len(data) - 4)
            if crc != crc32c(memoryview(data)[:-4]):
                raise ValueError("crc")
            magic, count, bpk, k, m = _HEAD.unpack_from(data, 0)
            if magic != MAGIC:
                raise ValueError("magic")
            pos = _HEAD.size
            nbytes = (m + 7) // 8
            bits = bytearray(data[pos : pos + nbytes])
            pos += nbytes
            (slen,) = _U32.unpack_from(data, pos)
            smallest = data[pos + 4 : pos + 4 + slen]
            pos += 4 + slen
            (llen,) = _U32.unpack_from(data, pos)
            largest = data[pos + 4 : pos + 4 + llen]
            if pos + 4 + llen != len(data) - 4 or len(bits) != nbytes:
                raise ValueError("length")
        except (ValueError, struct.error) as e:
            raise Corrupt(0, where=f"(meta: {e})") from None
        return cls(count, bpk, k, BloomFilter(m, k, bits), bytes(smallest), bytes(largest))


def make_meta(keys: list[bytes], bits_per_key: int, num_hashes: int) -> SstDirMeta:
    """Meta for a directory holding ``keys`` (ascending)."""
    if not keys:
        return SstDirMeta(0, bits_per_key, num_hashes, BloomFilter(0, num_hashes, bytearray()), b"", b"")
    m = max(MIN_BITS, len(keys) * bits_per_key)
    bits = bytearray((m + 7) // 8)
    for key in keys:
        bloom_add(bits, m, num_hashes, key)
    return SstDirMeta(
        len(keys), bits_per_key, num_hashes, BloomFilter(m, num_hashes, bits), keys[0], keys[-1]
    )


class SstDirBuilder:
    """Creates one SST directory entry by entry, keys strictly ascending.

    KV files are either written fresh (:meth:`add_records`) or hard-linked
    from an existing directory (:meth:`add_link`).  :meth:`finish` writes
    ``.meta`` last.  Nothing is synced here.
    """

    def __init__(
        self,
        root: StoreRoot,
        level: int,
        dir_no: int,
        bits_per_key: int = DEFAULT_BITS_PER_KEY,
        num_hashes: int = DEFAULT_NUM_HASHES,
    ):
        self.root = root
        self.level = level
        self.dir_no = dir_no
        self.rel = dir_rel(level, dir_no)
        self.bits_per_key = bits_per_key
        self.num_hashes = num_hashes
        self.keys: list[bytes] = []
        root.mkdir(self.rel)

    def __len__(self) -> int:
        return len(self.keys)

    def _push(self, key: bytes) -> str:
        if self.keys and key <= self.keys[-1]:
            raise ValueError(f"keys must ascend: {key!r} after {self.keys[-1]!r}")
        self.keys.append(key)
        return f"{self.rel}/{encode_key(key)}"

    def add_records(self, key: bytes, records: Iterable[KvRecord]) -> None:
        self.root.write_file(self._push(key), encode_records(records), "kv")

    def add_link(self, key: bytes, src_rel: str) -> None:
        self.root.hard_link(src_rel, self._push(key))

    def finish(self) -> SstDirMeta:
        meta = make_meta(self.keys, self.bits_per_key, self.num_hashes)
        self.root.write_file(f"{self.rel}/{META_NAME}", meta.encode(), "meta")
        return meta


def sstdir_write(
    root: StoreRoot,
    level: int,
    dir_no: int,
    entries: Iterable[tuple[bytes, list[KvRecord]]],
    bits_per_key: int = DEFAULT_BITS_PER_KEY,
    num_hashes: int = DEFAULT_NUM_HASHES,
) -> SstDirMeta:
    """Write a complete directory from ascending ``(key, records)`` pairs."""
    if root.exists(dir_rel(level, dir_no)):
        raise DirExists(17, "SST directory exists", dir_rel(level, dir_no))
    b = SstDirBuilder(root, level, dir_no, bits_per_key, num_hashes)
    for key, records in entries:
        b.add_records(key, records)
    return b.finish()


def meta_read(root: StoreRoot, level: int, dir_no: int) -> SstDirMeta:
    rel = f"{dir_rel(level, dir_no)}/{META_NAME}"
    try:
        data = root.read_file(rel)
    except FileNotFoundError:
        raise Corrupt(0, where=f"(missing {rel})") from None
    return SstDirMeta.decode(data)


def meta_rebuild(
    root: StoreRoot,
    level: int,
    dir_no: int,
    bits_per_key: int = DEFAULT_BITS_PER_KEY,
    num_hashes: int = DEFAULT_NUM_HASHES,
) -> SstDirMeta:
    """Recompute ``.meta`` from the directory's KV files and replace it."""
    rel = dir_rel(level, dir_no)
    keys = [k for k, _ in sstdir_names(root, level, dir_no)]
    meta = make_meta(keys, bits_per_key, num_hashes)
    tmp = f"{rel}/{META_NAME}.tmp"
    root.write_file(tmp, meta.encode(), "meta", exclusive=False)
    root.rename(tmp, f"{rel}/{META_NAME}")
    return meta


def read_kv_file(root: StoreRoot, rel: str) -> list[KvRecord]:
    try:
        return decode_records(root.read_file(rel))
    except Corrupt as e:
        raise Corrupt(e.prefix_count, e.records, f"({rel})") from None


def sstdir_lookup(
    root: StoreRoot,
    level: int,
    dir_no: int,
    key: bytes,
    snapshot_seq: int,
    meta: SstDirMeta | None = None,
) -> KvRecord | None:
    if meta is None:
        meta = meta_read(root, level, dir_no)
    if not meta.bloom.may_contain(key):
        return None
    try:
        records = read_kv_file(root, f"{dir_rel(level, dir_no)}/{encode_key(key)}")
    except FileNotFoundError:
        return None
    return newest_visible(records, snapshot_seq)


def sstdir_names(root: StoreRoot, level: int, dir_no: int) -> list[tuple[bytes, str]]:
    """``(raw key, filename)`` for every KV file, sorted by raw key."""
    out = []
    for name in root.list_dir(dir_rel(level, dir_no)):
        if name.startswith("."):
            continue
        out.append((decode_key(name), name))
    out.sort()
    return out


def sstdir_scan(root: StoreRoot, level: int, dir_no: int) -> Iterator[tuple[bytes, list[KvRecord]]]:
    rel = dir_rel(level, dir_no)
    for key, name in sstdir_names(root, level, dir_no):
        yield key, read_kv_file(root, f"{rel}/{name}")
