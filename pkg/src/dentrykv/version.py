"""Version catalog, manifest and recovery.

The *version* lists the live SST directories per level together with the
global counters.  It is mirrored durably by an append-only manifest
``MANIFEST-<number:06>``; ``CURRENT`` names the live one.

Manifest record: ``crc32c u32 | len u32 | payload`` with the CRC over the
payload.  The payload is a sequence of tagged fields (tag u8):

==== ===============================================================
tag  field
==== ===============================================================
1    last_seq u64
2    next_file_number u64
3    log_number u64
4    added dir: level u8, dir_no u64, entry_count u32,
     smallest (u32 len + bytes), largest (u32 len + bytes)
5    removed dir: level u8, dir_no u64
==== ===============================================================

Recovery order: replay the manifest's valid prefix, then reconcile the
level directories against it (delete orphans, fail on missing committed
directories), then report which logs still need replaying.
"""

from __future__ import annotations

import logging
import struct
import threading
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable

from .errors import Corruption
from .kernels import crc32c
from .storage import AppendFile, StoreRoot
from .wal import parse_wal_name

log = logging.getLogger(__name__)

CURRENT = "CURRENT"
MANIFEST_ROLL_BYTES = 4 << 20
DEFAULT_MAX_LEVEL = 6

_FRAME = struct.Struct("<II")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_ADD = struct.Struct("<BQI")
_DEL = struct.Struct("<BQ")

TAG_LAST_SEQ, TAG_NEXT_FILE, TAG_LOG_NUMBER, TAG_ADD, TAG_REMOVE = 1, 2, 3, 4, 5


def manifest_name(number: int) -> str:
    return f"MANIFEST-{number:06d}"


@dataclass(frozen=True)
class SstDirHandle:
    level: int
    dir_no: int
    smallest: bytes
    largest: bytes
    entry_count: int

    def contains(self, key: bytes) -> bool:
        return self.smallest <= key <= self.largest

    def overlaps(self, lo: bytes, hi: bytes | None) -> bool:
        """Intersects the half-open range ``[lo, hi)`` (``hi=None``: unbounded)."""
        return self.largest >= lo and (hi is None or self.smallest < hi)

    def overlaps_closed(self, lo: bytes, hi: bytes) -> bool:
        return self.largest >= lo and self.smallest <= hi


@dataclass
class ManifestEdit:
    last_seq: int | None = None
    next_file_number: int | None = None
    log_number: int | None = None
    added: list[SstDirHandle] = field(default_factory=list)
    removed: list[tuple[int, int]] = field(default_factory=list)

    def encode(self) -> bytes:
        parts = []
        if self.last_seq is not None:
            parts.append(bytes([TAG_LAST_SEQ]) + _U64.pack(self.last_seq))
        if self.next_file_number is not None:
            parts.append(bytes([TAG_NEXT_FILE]) + _U64.pack(self.next_file_number))
        if self.log_number is not None:
            parts.append(bytes([TAG_LOG_NUMBER]) + _U64.pack(self.log_number))
        for level, dir_no in self.removed:
            parts.append(bytes([TAG_REMOVE]) + _DEL.pack(level, dir_no))
        for h in self.added:
            parts.append(
                b"".join(
                    (
                        bytes([TAG_ADD]),
                        _ADD.pack(h.level, h.dir_no, h.entry_count),
                        _U32.pack(len(h.smallest)),
                        h.smallest,
                        _U32.pack(len(h.largest)),
                        h.largest,
                    )
                )
            )
        return b"".join(parts)

    @classmethod
    def decode(cls, payload: bytes) -> "ManifestEdit":
        e = cls()
        pos, n = 0, len(payload)
        while pos < n:
            tag = payload[pos]
            pos += 1
            if tag in (TAG_LAST_SEQ, TAG_NEXT_FILE, TAG_LOG_NUMBER):
                (v,) = _U64.unpack_from(payload, pos)
                pos += 8
                if tag == TAG_LAST_SEQ:
                    e.last_seq = v
                elif tag == TAG_NEXT_FILE:
                    e.next_file_number = v
                else:
                    e.log_number = v
            elif tag == TAG_REMOVE:
                e.removed.append(_DEL.unpack_from(payload, pos))
                pos += _DEL.size
            elif tag == TAG_ADD:
                level, dir_no, count = _ADD.unpack_from(payload, pos)
                pos += _ADD.size
                (sl,) = _U32.unpack_from(payload, pos)
                smallest = payload[pos + 4 : pos + 4 + sl]
                pos += 4 + sl
                (ll,) = _U32.unpack_from(payload, pos)
                largest = payload[pos + 4 : pos + 4 + ll]
                pos += 4 + ll
                if pos > n:
                    raise ValueError("truncated add")
                e.added.append(SstDirHandle(level, dir_no, bytes(smallest), bytes(largest), count))
            else:
                raise ValueError(f"unknown manifest tag {tag}")
        return e


def frame(payload: bytes) -> bytes:
    return _FRAME.pack(crc32c(payload), len(payload)) + payload


def read_manifest(data: bytes) -> tuple[list[ManifestEdit], bool]:
    """Decode edits from a manifest image; the flag reports a damaged tail."""
    edits = []
    pos, n = 0, len(data)
    while pos < n:
        if pos + _FRAME.size > n:
            return edits, True
        crc, ln = _FRAME.unpack_from(data, pos)
        payload = data[pos + _FRAME.size : pos + _FRAME.size + ln]
        if len(payload) != ln or crc32c(payload) != crc:
            return edits, True
        try:
            edits.append(ManifestEdit.decode(payload))
        except (ValueError, struct.error):
            return edits, True
        pos += _FRAME.size + ln
    return edits, False


@dataclass(frozen=True)
class Version:
    """Immutable catalog snapshot.  L0 newest first; L>=1 by smallest key."""

    levels: tuple[tuple[SstDirHandle, ...], ...]
    last_seq: int = 0
    next_file_number: int = 2
    log_number: int = 0

    @classmethod
    def empty(cls, max_level: int = DEFAULT_MAX_LEVEL) -> "Version":
        return cls(tuple(() for _ in range(max_level + 1)))

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def handles(self) -> Iterable[SstDirHandle]:
        for lvl in self.levels:
            yield from lvl

    def dir_ids(self) -> set[tuple[int, int]]:
        return {(h.level, h.dir_no) for h in self.handles()}

    def level_entries(self, level: int) -> int:
        return sum(h.entry_count for h in self.levels[level])

    def apply(self, edit: ManifestEdit) -> "Version":
        removed = set(edit.removed)
        levels = [[h for h in lvl if (h.level, h.dir_no) not in removed] for lvl in self.levels]
        for h in edit.added:
            if h.level > self.max_level:
                raise Corruption(f"level {h.level} beyond max level {self.max_level}")
            levels[h.level].append(h)
        levels[0].sort(key=lambda h: -h.dir_no)
        for lvl in levels[1:]:
            lvl.sort(key=lambda h: h.smallest)
            for a, b in zip(lvl, lvl[1:]):
                if a.largest >= b.smallest:
                    raise Corruption(
                        f"overlapping ranges at L{a.level}: {a.dir_no} and {b.dir_no}"
                    )
        last_seq = self.last_seq if edit.last_seq is None else max(self.last_seq, edit.last_seq)
        return Version(
            tuple(tuple(lvl) for lvl in levels),
            last_seq,
            self.next_file_number if edit.next_file_number is None else edit.next_file_number,
            self.log_number if edit.log_number is None else edit.log_number,
        )

    def snapshot_edit(self) -> ManifestEdit:
        return ManifestEdit(
            last_seq=self.last_seq,
            next_file_number=self.next_file_number,
            log_number=self.log_number,
            added=list(self.handles()),
        )

    def encode(self) -> bytes:
        """Canonical byte image, used to compare versions exactly."""
        return self.snapshot_edit().encode()

    # -- queries -----------------------------------------------------------

    def candidates_for_key(self, level: int, key: bytes) -> list[SstDirHandle]:
        handles = self.levels[level]
        if level == 0:
            return [h for h in handles if h.contains(key)]
        i = bisect_right(handles, key, key=lambda h: h.smallest) - 1
        if i >= 0 and handles[i].largest >= key:
            return [handles[i]]
        return []

    def candidates_for_range(self, lo: bytes, hi: bytes | None) -> list[list[SstDirHandle]]:
        return [[h for h in lvl if h.overlaps(lo, hi)] for lvl in self.levels]

    def overlapping(self, level: int, lo: bytes, hi: bytes) -> list[SstDirHandle]:
        return [h for h in self.levels[level] if h.overlaps_closed(lo, hi)]


@dataclass
class CompactionJob:
    level: int
    inputs_upper: list[SstDirHandle]
    inputs_lower: list[SstDirHandle]
    snapshot_floor: int | None = None

    @property
    def output_level(self) -> int:
        return self.level + 1

    @property
    def inputs(self) -> list[SstDirHandle]:
        return self.inputs_upper + self.inputs_lower


def level_limit(level: int, l0_limit: int) -> int:
    return l0_limit * 10**level


def pick_compaction(
    v: Version, l0_limit: int, cursors: dict[int, bytes] | None = None
) -> CompactionJob | None:
    """Lowest level whose KV-file count has reached its limit, or ``None``.

    ``cursors`` holds the per-level round-robin position (largest key of the
    previous pick) and is updated in place.
    """
    cursors = {} if cursors is None else cursors
    for n in range(v.max_level):
        if not v.levels[n] or v.level_entries(n) < level_limit(n, l0_limit):
            continue
        if n == 0:
            upper = list(v.levels[0])
        else:
            handles = v.levels[n]
            cur = cursors.get(n)
            pick = handles[0]
            if cur is not None:
                for h in handles:
                    if h.smallest > cur:
                        pick = h
                        break
            upper = [pick]
            cursors[n] = pick.largest
        lo = min(h.smallest for h in upper)
        hi = max(h.largest for h in upper)
        return CompactionJob(n, upper, v.overlapping(n + 1, lo, hi))
    return None


class VersionSet:
    """Owns the current :class:`Version`, the manifest and file numbering."""

    def __init__(self, root: StoreRoot, max_level: int = DEFAULT_MAX_LEVEL):
        self.root = root
        self.current = Version.empty(max_level)
        self.next_file_number = 2
        self.manifest_number = 0
        self.cursors: dict[int, bytes] = {}
        self._manifest: AppendFile | None = None
        self._broken = False
        self._lock = threading.RLock()

    @property
    def max_level(self) -> int:
        return self.current.max_level

    def new_file_number(self) -> int:
        with self._lock:
            n = self.next_file_number
            self.next_file_number += 1
            return n

    def mark_file_number_used(self, n: int) -> None:
        with self._lock:
            if n >= self.next_file_number:
                self.next_file_number = n + 1

    # -- manifest ----------------------------------------------------------

    def _install_manifest(self, v: Version) -> None:
        """Write a fresh manifest holding ``v`` and point CURRENT at it."""
        number = self.new_file_number()
        v = Version(v.levels, v.last_seq, self.next_file_number, v.log_number)
        name = manifest_name(number)
        f = self.root.open_append(name, "manifest")
        try:
            f.append(frame(v.snapshot_edit().encode()))
            f.sync()
        except BaseException:
            f.close()
            raise
        tmp = CURRENT + ".tmp"
        self.root.write_file(tmp, (name + "\n").encode(), "current", exclusive=False)
        self.root.sync_file(tmp)
        self.root.rename(tmp, CURRENT)
        self.root.sync_dir(".")
        old, old_number = self._manifest, self.manifest_number
        self._manifest, self.manifest_number = f, number
        self.current = v
        self._broken = False
        if old is not None:
            old.close()
        if old_number and self.root.exists(manifest_name(old_number)):
            self.root.remove(manifest_name(old_number))

    def log_and_apply(self, edit: ManifestEdit) -> Version:
        """Durably append ``edit``, then publish the resulting version.

        If the append or its sync fails the in-memory version is untouched
        and the next commit starts a fresh manifest.
        """
        with self._lock:
            if edit.last_seq is not None and edit.last_seq < self.current.last_seq:
                edit.last_seq = self.current.last_seq
            edit.next_file_number = self.next_file_number
            new_v = self.current.apply(edit)
            faults = self.root.faults
            if self._broken or self._manifest is None:
                self._install_manifest(self.current)
                edit.next_file_number = self.next_file_number
                new_v = self.current.apply(edit)
            faults.point("manifest:before_append")
            try:
                self._manifest.append(frame(edit.encode()))
                faults.point("manifest:after_append")
                self._manifest.sync()
            except Exception:
                self._broken = True
                raise
            self.current = new_v
            if self._manifest.size > MANIFEST_ROLL_BYTES:
                try:
                    self._install_manifest(self.current)
                except Exception:
                    log.exception("manifest roll failed; will retry on next commit")
                    self._broken = True
            return new_v

    def close(self) -> None:
        with self._lock:
            if self._manifest is not None:
                self._manifest.close()
                self._manifest = None


@dataclass
class RecoveryResult:
    versions: VersionSet
    logs_to_replay: list[int]
    obsolete_logs: list[int]
    orphans_removed: list[str]
    manifest_rewritten: bool


def _parse_table_name(name: str) -> int | None:
    stem = name[:-4] if name.endswith(".sst") else name
    return int(stem) if stem.isdigit() else None


def replay_manifest(data: bytes, max_level: int = DEFAULT_MAX_LEVEL) -> tuple[Version, bool]:
    """Apply the valid prefix of a manifest image to an empty version."""
    edits, damaged = read_manifest(data)
    v = Version.empty(max_level)
    for i, e in enumerate(edits):
        try:
            v = v.apply(e)
        except Corruption:
            log.warning("manifest edit %d is inconsistent; truncating replay there", i)
            return v, True
    return v, damaged


def recover(root: StoreRoot, max_level: int = DEFAULT_MAX_LEVEL) -> RecoveryResult:
    """Rebuild the version from disk and reconcile the directory tree."""
    vs = VersionSet(root, max_level)
    for lvl in range(max_level + 1):
        if not root.is_dir(f"L{lvl}"):
            root.mkdir(f"L{lvl}")
    names = root.list_dir(".")
    fresh = CURRENT not in names
    damaged = False
    if fresh:
        v = Version.empty(max_level)
        current_manifest = None
    else:
        current_manifest = root.read_file(CURRENT).decode().strip()
        if current_manifest not in names:
            raise Corruption(f"CURRENT names missing manifest {current_manifest}")
        v, damaged = replay_manifest(root.read_file(current_manifest), max_level)
        if damaged:
            log.warning("manifest %s has a damaged tail; rewriting", current_manifest)
        vs.manifest_number = int(current_manifest.split("-")[1])
        vs.mark_file_number_used(vs.manifest_number)
    vs.mark_file_number_used(v.next_file_number - 1)

    live = v.dir_ids()
    orphans = []
    on_disk = set()
    for lvl in range(max_level + 1):
        for name in root.list_dir(f"L{lvl}"):
            rel = f"L{lvl}/{name}"
            number = _parse_table_name(name)
            if number is not None:
                vs.mark_file_number_used(number)
            if number is not None and (lvl, number) in live:
                on_disk.add((lvl, number))
                continue
            if root.is_dir(rel):
                root.remove_tree(rel)
            else:
                root.remove(rel)
            orphans.append(rel)
    missing = live - on_disk
    if missing:
        raise Corruption(f"committed SST directories missing on disk: {sorted(missing)}")

    replay, obsolete = [], []
    for name in names:
        n = parse_wal_name(name)
        if n is not None:
            vs.mark_file_number_used(n)
            (replay if n >= v.log_number else obsolete).append(n)
        elif name.startswith("MANIFEST-") and name != current_manifest:
            root.remove(name)
        elif name == CURRENT + ".tmp":
            root.remove(name)

    vs.current = v
    rewrite = fresh or damaged or root.file_size(current_manifest) > MANIFEST_ROLL_BYTES
    if rewrite:
        vs._install_manifest(v)
    else:
        vs._manifest = root.open_append(current_manifest, "manifest")
    return RecoveryResult(vs, sorted(replay), sorted(obsolete), orphans, rewrite)
