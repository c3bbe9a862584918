"""Minor and major compaction.

Minor compaction turns a sealed memtable into a new L0 table.  Major
compaction merges a job's inputs into fresh level ``n+1`` tables.  For the
dentry format a surviving KV file is hard-linked into its output directory
untouched; a KV file is rewritten only when variants of one key must be
merged across inputs or pruned.

Stage boundaries call ``root.faults.point(name)`` so tests can crash the
process image at each one.
"""

from __future__ import annotations

import heapq
import logging
import time
from typing import Callable, Iterable, NamedTuple, Sequence

from .codec import DELETE, KvRecord, decode_headers
from .errors import SimulatedCrash
from .sstdir import SstDirBuilder, dir_rel, read_kv_file, sstdir_names
from .storage import StoreRoot
from .version import CompactionJob, ManifestEdit, SstDirHandle, Version, VersionSet
from .wal import LogRetirer

log = logging.getLogger(__name__)

_HEADER_PEEK = 64


class Header(NamedTuple):
    seq: int
    op: int
    value_len: int
    src: int
    idx: int


def retained(records: Sequence, snapshot_floor: int | None) -> list:
    """Variants that must survive, ascending by seq.

    Without live snapshots only the newest survives.  With a floor, every
    variant at or above it survives, plus the newest one below it.
    """
    if not records:
        return []
    records = sorted(records, key=lambda r: r.seq)
    if snapshot_floor is None:
        return [records[-1]]
    keep = [r for r in records if r.seq >= snapshot_floor]
    below = [r for r in records if r.seq < snapshot_floor]
    if below:
        keep.insert(0, below[-1])
    return keep


def resolve_winner(contenders: Sequence[Sequence]) -> int:
    """Index of the contender holding the greatest sequence number.

    Each contender is a list of headers (anything with ``.seq`` or a tuple
    whose first item is the seq).
    """
    if not contenders:
        raise ValueError("resolve_winner needs at least one contender")

    def top(c):
        return max((h.seq if hasattr(h, "seq") else h[0]) for h in c)

    return max(range(len(contenders)), key=lambda i: top(contenders[i]))


def should_drop_tombstone(key: bytes, output_level: int, v: Version) -> bool:
    if output_level >= v.max_level:
        return True
    for lvl in range(output_level + 1, v.max_level + 1):
        if v.candidates_for_key(lvl, key):
            return False
    return True


class OutputSet:
    """Rolls output tables at the per-table entry target."""

    def __init__(self, open_builder: Callable[[int], object], alloc: Callable[[], int], target: int, on_close=None):
        self._open = open_builder
        self._alloc = alloc
        self.target = target
        self.current = None
        self.handles: list[SstDirHandle] = []
        self._on_close = on_close

    def builder(self):
        if self.current is not None and len(self.current) >= self.target:
            self.close_current()
        if self.current is None:
            self.current = self._open(self._alloc())
        return self.current

    def close_current(self) -> None:
        b = self.current
        if b is None:
            return
        self.current = None
        meta = b.finish()
        self.handles.append(
            SstDirHandle(b.level, b.dir_no, meta.smallest_key, meta.largest_key, meta.entry_count)
        )
        if self._on_close is not None:
            self._on_close(b)

    def finish(self) -> list[SstDirHandle]:
        self.close_current()
        return self.handles


def merge_sorted_inputs(per_input: Sequence[Iterable[tuple[bytes, object]]]):
    """K-way merge; yields ``(key, [(input_index, item), ...])`` ascending."""

    def tag(i, it):
        for key, item in it:
            yield key, i, item

    streams = [tag(i, it) for i, it in enumerate(per_input)]
    group_key, group = None, []
    for key, i, item in heapq.merge(*streams, key=lambda t: (t[0], t[1])):
        if key != group_key:
            if group:
                yield group_key, group
            group_key, group = key, []
        group.append((i, item))
    if group:
        yield group_key, group


def major_compact_dentry(
    root: StoreRoot,
    job: CompactionJob,
    v: Version,
    alloc: Callable[[], int],
    file_target: int,
    bits_per_key: int,
    num_hashes: int,
) -> list[SstDirHandle]:
    """Merge the job's SST directories into new ``L(n+1)`` directories."""
    out_level = job.output_level
    inputs = job.inputs
    listings = [sstdir_names(root, h.level, h.dir_no) for h in inputs]
    first_entry = [True]

    def on_close(_b):
        root.faults.point("major:after_output_dir")

    outs = OutputSet(
        lambda no: SstDirBuilder(root, out_level, no, bits_per_key, num_hashes),
        alloc,
        file_target,
        on_close,
    )
    for key, group in merge_sorted_inputs(listings):
        rels = [f"{dir_rel(inputs[i].level, inputs[i].dir_no)}/{name}" for i, name in group]
        headers: list[list[Header]] = []
        full: dict[int, list[KvRecord]] = {}
        for ci, rel in enumerate(rels):
            data, size = root.read_range(rel, 0, _HEADER_PEEK)
            hs = decode_headers(data, size)
            if hs is None:
                recs = read_kv_file(root, rel)
                full[ci] = recs
                hs = [(r.seq, r.op, len(r.value)) for r in recs]
            headers.append([Header(s, o, n, ci, ri) for ri, (s, o, n) in enumerate(hs)])
        keep = retained([h for hs in headers for h in hs], job.snapshot_floor)
        if len(keep) == 1 and keep[0].op == DELETE and should_drop_tombstone(key, out_level, v):
            continue
        srcs = {h.src for h in keep}
        b = outs.builder()
        if len(srcs) == 1 and len(keep) == len(headers[keep[0].src]):
            b.add_link(key, rels[keep[0].src])
        else:
            for ci in srcs:
                if ci not in full:
                    full[ci] = read_kv_file(root, rels[ci])
            b.add_records(key, [full[h.src][h.idx] for h in keep])
        if first_entry[0]:
            first_entry[0] = False
            root.faults.point("major:after_first_entry")
    return outs.finish()


class Compactor:
    """Runs compactions against a table format and commits them."""

    def __init__(self, root: StoreRoot, versions: VersionSet, fmt, retirer: LogRetirer, config):
        self.root = root
        self.versions = versions
        self.fmt = fmt
        self.retirer = retirer
        self.config = config
        self.minor_count = 0
        self.major_count = 0

    def minor_compact(self, mem, next_log_number: int, now: float | None = None) -> ManifestEdit:
        """Write ``mem`` as a new L0 table and commit it."""
        faults = self.root.faults
        if len(mem) == 0:
            edit = ManifestEdit(log_number=next_log_number)
            self.versions.log_and_apply(edit)
        else:
            dir_no = self.versions.new_file_number()
            faults.point("minor:start")
            handle = self.fmt.write_table(0, dir_no, mem.items())
            faults.point("minor:before_commit")
            edit = ManifestEdit(last_seq=mem.max_seq, log_number=next_log_number, added=[handle])
            try:
                self.versions.log_and_apply(edit)
            except Exception:
                self._discard([handle])
                raise
            faults.point("minor:after_commit")
        self.minor_count += 1
        if mem.log_number is not None:
            done = time.time() if now is None else now
            self.retirer.schedule(mem.log_number, done)
            self.retirer.retire_due(done)
        return edit

    def major_compact(self, job: CompactionJob) -> ManifestEdit:
        """Merge ``job`` and commit; removing inputs is left to the caller."""
        v = self.versions.current
        faults = self.root.faults
        faults.point("major:start")
        outputs: list[SstDirHandle] = []
        try:
            outputs = self.fmt.compact(job, v, self.versions.new_file_number)
            faults.point("major:before_commit")
            edit = ManifestEdit(
                added=outputs, removed=[(h.level, h.dir_no) for h in job.inputs]
            )
            self.versions.log_and_apply(edit)
        except SimulatedCrash:
            raise
        except Exception:
            self._discard(outputs)
            raise
        faults.point("major:after_commit")
        self.major_count += 1
        return edit

    def remove_inputs(self, handles: Iterable[SstDirHandle]) -> None:
        faults = self.root.faults
        for i, h in enumerate(handles):
            self.fmt.remove_table(h)
            if i == 0:
                faults.point("major:after_first_removal")

    def _discard(self, handles: Iterable[SstDirHandle]) -> None:
        for h in handles:
            try:
                self.fmt.remove_table(h)
            except OSError:
                log.warning("could not remove uncommitted output L%d/%06d", h.level, h.dir_no)
