"""Table format where each SST is a directory of per-key KV files."""

from __future__ import annotations

import logging
from typing import Callable, Iterator

from .cache import LRUCache
from .codec import KvRecord, encode_key, newest_visible
from .compaction import major_compact_dentry
from .errors import Corrupt
from .sstdir import SstDirBuilder, SstDirMeta, dir_rel, meta_read, meta_rebuild, read_kv_file, sstdir_names
from .storage import StoreRoot
from .version import CompactionJob, SstDirHandle, Version

log = logging.getLogger(__name__)


def _records_charge(recs) -> int:
    return 64 + sum(len(r.value) + 32 for r in recs)


class DentryFormat:
    kind = "dentry"

    def __init__(self, root: StoreRoot, config):
        self.root = root
        self.config = config
        self.handles: LRUCache[SstDirMeta] = LRUCache(config.handle_cache_entries)
        self.values: LRUCache[tuple[KvRecord, ...]] = LRUCache(config.value_cache_bytes, _records_charge)

    def table_rel(self, level: int, number: int) -> str:
        return dir_rel(level, number)

    def write_table(self, level: int, number: int, items) -> SstDirHandle:
        b = SstDirBuilder(self.root, level, number, self.config.bloom_bits_per_key, self.config.bloom_num_hashes)
        for key, records in items:
            b.add_records(key, records)
        self.root.faults.point("minor:before_meta")
        meta = b.finish()
        self.handles.put(number, meta)
        return SstDirHandle(level, number, meta.smallest_key, meta.largest_key, meta.entry_count)

    def meta(self, h: SstDirHandle) -> SstDirMeta:
        meta = self.handles.get(h.dir_no)
        if meta is None:
            try:
                meta = meta_read(self.root, h.level, h.dir_no)
            except Corrupt:
                log.warning("rebuilding damaged meta for %s", dir_rel(h.level, h.dir_no))
                meta = meta_rebuild(
                    self.root, h.level, h.dir_no, self.config.bloom_bits_per_key, self.config.bloom_num_hashes
                )
            self.handles.put(h.dir_no, meta)
        return meta

    def verify(self, h: SstDirHandle) -> None:
        self.meta(h)

    def lookup(self, h: SstDirHandle, key: bytes, snapshot_seq: int) -> KvRecord | None:
        ck = (h.dir_no, key)
        recs = self.values.get(ck)
        if recs is None:
            if not self.meta(h).bloom.may_contain(key):
                return None
            try:
                recs = tuple(read_kv_file(self.root, f"{dir_rel(h.level, h.dir_no)}/{encode_key(key)}"))
            except FileNotFoundError:
                return None
            self.values.put(ck, recs)
        return newest_visible(recs, snapshot_seq)

    def scan_entries(
        self, h: SstDirHandle, lo: bytes, hi: bytes | None
    ) -> Iterator[tuple[bytes, Callable[[], list[KvRecord]]]]:
        rel = dir_rel(h.level, h.dir_no)
        root = self.root
        for key, name in sstdir_names(root, h.level, h.dir_no):
            if key < lo or (hi is not None and key >= hi):
                continue
            yield key, (lambda path=f"{rel}/{name}": read_kv_file(root, path))

    def table_records(self, h: SstDirHandle) -> Iterator[tuple[bytes, list[KvRecord]]]:
        for key, loader in self.scan_entries(h, b"", None):
            yield key, loader()

    def compact(self, job: CompactionJob, v: Version, alloc: Callable[[], int]) -> list[SstDirHandle]:
        cfg = self.config
        return major_compact_dentry(
            self.root, job, v, alloc, cfg.sstdir_file_target, cfg.bloom_bits_per_key, cfg.bloom_num_hashes
        )

    def remove_table(self, h: SstDirHandle) -> None:
        rel = dir_rel(h.level, h.dir_no)
        if self.root.exists(rel):
            self.root.remove_tree(rel)
        self.invalidate({h.dir_no})

    def invalidate(self, numbers: set[int]) -> None:
        self.handles.invalidate_if(lambda k: k in numbers)
        self.values.invalidate_if(lambda k: k[0] in numbers)
