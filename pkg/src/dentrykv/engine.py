"""Embedded key-value store API.

:class:`Engine` drives either table format (``"dentry"`` or ``"packed"``)
over the same write path, memtables, manifest and compaction scheduling, so
the two differ only in their on-disk layout and compaction I/O.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterator

from .codec import DELETE, MAX_VALUE, PUT, KvRecord, check_key, newest_visible
from .compaction import Compactor
from .dentry import DentryFormat
from .errors import Corruption, EngineClosed, SimulatedCrash, SnapshotReleased
from .memtable import ImmutableQueue, Memtable
from .packed import PackedFormat
from .storage import StoreRoot, open_root
from .version import CompactionJob, ManifestEdit, SstDirHandle, Version, pick_compaction, recover
from .wal import LogRetirer, WalFile, wal_replay

log = logging.getLogger(__name__)

KIND_FILE = "ENGINE"


@dataclass
class EngineConfig:
    path: str
    engine_kind: str = "dentry"
    memtable_bytes: int = 4 << 20
    immutable_queue_cap: int = 4
    l0_limit_files: int = 10_000
    sstdir_file_target: int = 2_000
    bloom_bits_per_key: int = 10
    bloom_num_hashes: int = 7
    value_cache_bytes: int = 8 << 20
    handle_cache_entries: int = 1_000
    wal_grace_seconds: float = 60.0
    wal_sync_per_write: bool = False
    sync_enabled: bool = True
    max_level: int = 6
    background_compaction: bool = True
    flush_on_close: bool = True

    def validate(self) -> None:
        if self.engine_kind not in ("dentry", "packed"):
            raise ValueError(f"unknown engine kind {self.engine_kind!r}")
        for name in ("memtable_bytes", "immutable_queue_cap", "l0_limit_files", "sstdir_file_target",
                     "bloom_bits_per_key", "bloom_num_hashes", "max_level"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.value_cache_bytes < 0 or self.handle_cache_entries < 0 or self.wal_grace_seconds < 0:
            raise ValueError("cache sizes and grace period must be non-negative")
        if self.l0_limit_files < self.sstdir_file_target:
            raise ValueError("l0_limit_files must be >= sstdir_file_target")


class Snapshot:
    """A pinned sequence number.  Release it (or use ``with``) when done."""

    def __init__(self, engine: "Engine", seq: int):
        self._engine = engine
        self.seq = seq
        self.released = False

    def release(self) -> None:
        self._engine.snapshot_release(self)

    def __enter__(self) -> "Snapshot":
        return self

    def __exit__(self, *exc) -> None:
        if not self.released:
            self.release()

    def __repr__(self) -> str:
        return f"Snapshot(seq={self.seq}{', released' if self.released else ''})"


@dataclass
class _ReadView:
    version: Version
    memtables: list[Memtable]
    seq: int


@dataclass
class _PendingRemoval:
    handles: list[SstDirHandle]
    ids: set = field(default_factory=set)


class Engine:
    def __init__(self, config: EngineConfig):
        config.validate()
        self.config = config
        self.root: StoreRoot = open_root(config.path, config.sync_enabled)
        self._check_kind()
        self.fmt = (DentryFormat if config.engine_kind == "dentry" else PackedFormat)(self.root, config)
        self.retirer = LogRetirer(self.root, config.wal_grace_seconds)

        rec = recover(self.root, config.max_level)
        self.recovery = rec
        self.versions = rec.versions
        self.compactor = Compactor(self.root, self.versions, self.fmt, self.retirer, config)

        self._write_lock = threading.RLock()
        self._mu = threading.Condition(threading.RLock())
        self._compaction_lock = threading.RLock()
        self._imm = ImmutableQueue(config.immutable_queue_cap)
        self._snapshots: Counter[int] = Counter()
        self._pins: Counter[int] = Counter()
        self._pinned_versions: dict[int, Version] = {}
        self._pending: list[_PendingRemoval] = []
        self._closed = False
        self._stop = False
        self.bg_error: BaseException | None = None
        self._worker: threading.Thread | None = None

        for h in self.versions.current.handles():
            self.fmt.verify(h)
        self._last_seq = self.versions.current.last_seq
        self._replay_logs(rec.logs_to_replay)
        now = time.time()
        for n in rec.obsolete_logs:
            self.retirer.schedule(n, now)
        self.retirer.retire_due(now)

        if config.background_compaction:
            self._worker = threading.Thread(target=self._worker_loop, name="dentrykv-compaction", daemon=True)
            self._worker.start()
        else:
            self._drain_inline()

    @classmethod
    def open(cls, config: EngineConfig | None = None, **kwargs) -> "Engine":
        if config is None:
            config = EngineConfig(**kwargs)
        elif kwargs:
            config = replace(config, **kwargs)
        return cls(config)

    # -- open helpers ------------------------------------------------------

    def _check_kind(self) -> None:
        kind = self.config.engine_kind
        if self.root.exists(KIND_FILE):
            on_disk = self.root.read_file(KIND_FILE).decode().strip()
            if on_disk != kind:
                raise Corruption(f"store was created by the {on_disk!r} engine, not {kind!r}")
        elif not self.root.exists("CURRENT"):
            self.root.write_file(KIND_FILE, (kind + "\n").encode(), "current")

    def _replay_logs(self, numbers: list[int]) -> None:
        mem = Memtable()
        floor = self.versions.current.last_seq
        for n in numbers:
            for seq, op, key, value in wal_replay(self.root, n):
                if seq <= floor or seq <= self._last_seq:
                    continue
                mem.insert(key, KvRecord(seq, op, value))
                self._last_seq = seq
        wal_no = self.versions.new_file_number()
        self._wal = WalFile(self.root, wal_no, self.config.wal_sync_per_write)
        self._mem = Memtable(wal_no)
        # Replayed data goes straight to L0; the replayed logs then age out.
        self.compactor.minor_compact(mem, wal_no)
        now = time.time()
        for n in numbers:
            self.retirer.schedule(n, now)

    # -- write path --------------------------------------------------------

    def _ensure_open(self) -> None:
        if self._closed:
            raise EngineClosed("engine is closed")
        if isinstance(self.bg_error, SimulatedCrash):
            raise EngineClosed(f"engine crashed at {self.bg_error.point}")

    def put(self, key: bytes, value: bytes) -> int:
        """Store ``value`` under ``key``; returns the assigned sequence number."""
        check_key(key)
        if len(value) > MAX_VALUE:
            raise ValueError("value too large")
        return self._write(key, PUT, bytes(value))

    def delete(self, key: bytes) -> int:
        check_key(key)
        return self._write(key, DELETE, b"")

    def _write(self, key: bytes, op: int, value: bytes) -> int:
        with self._write_lock:
            self._ensure_open()
            seq = self._last_seq + 1
            self._wal.append(seq, op, key, value)
            self._mem.insert(key, KvRecord(seq, op, value))
            self._last_seq = seq
            if self._mem.approx_bytes >= self.config.memtable_bytes:
                self._seal()
            return seq

    def flush(self) -> None:
        """Seal the mutable memtable (if non-empty) and wait until it is on disk."""
        with self._write_lock:
            self._ensure_open()
            if len(self._mem):
                self._seal()
        self.wait_idle(majors=False)

    def _seal(self) -> None:
        """Make the mutable memtable immutable and install a fresh one + log."""
        with self._mu:
            while self._imm.full:
                if self._worker is None:
                    self._mu.release()
                    try:
                        self.compaction_worker_step()
                    finally:
                        self._mu.acquire()
                else:
                    if self.bg_error is not None and isinstance(self.bg_error, SimulatedCrash):
                        raise EngineClosed("compaction worker crashed")
                    self._mu.wait(0.1)
        self._wal.seal_and_sync()
        new_no = self.versions.new_file_number()
        new_wal = WalFile(self.root, new_no, self.config.wal_sync_per_write)
        with self._mu:
            self._imm.push(self._mem.seal())
            self._mem = Memtable(new_no)
            self._wal = new_wal
            self._mu.notify_all()
        if self._worker is None:
            self._drain_inline()

    # -- background work ---------------------------------------------------

    def _drain_inline(self) -> None:
        while self.compaction_worker_step():
            pass

    def _snapshot_floor(self) -> int | None:
        with self._mu:
            return min(self._snapshots) if self._snapshots else None

    def compaction_worker_step(self) -> bool:
        """Do one unit of background work; returns whether anything happened."""
        with self._compaction_lock:
            now = time.time()
            self.retirer.retire_due(now)
            with self._mu:
                head = self._imm.head()
                if head is not None:
                    rest = self._imm.newest_first()[:-1]
                    next_log = rest[-1].log_number if rest else self._mem.log_number
            if head is not None:
                self.compactor.minor_compact(head, next_log)
                with self._mu:
                    self._imm.pop()
                    self._mu.notify_all()
                return True
            job = pick_compaction(self.versions.current, self.config.l0_limit_files, self.versions.cursors)
            if job is not None:
                self._run_major(job)
                return True
            return self._collect_garbage()

    def _run_major(self, job: CompactionJob) -> None:
        job.snapshot_floor = self._snapshot_floor()
        self.compactor.major_compact(job)
        with self._mu:
            self._pending.append(
                _PendingRemoval(job.inputs, {(h.level, h.dir_no) for h in job.inputs})
            )
        self._collect_garbage()

    def _collect_garbage(self) -> bool:
        """Remove compacted inputs that no reader can still see."""
        with self._mu:
            if not self._pending:
                return False
            pinned = set()
            for v in self._pinned_versions.values():
                pinned |= v.dir_ids()
            ready = [p for p in self._pending if not (p.ids & pinned)]
            self._pending = [p for p in self._pending if p.ids & pinned]
        for p in ready:
            self.compactor.remove_inputs(p.handles)
        return bool(ready)

    def _worker_loop(self) -> None:
        backoff = 0.01
        while True:
            with self._mu:
                if self._stop:
                    return
            try:
                progressed = self.compaction_worker_step()
                backoff = 0.01
            except SimulatedCrash as e:
                self.bg_error = e
                with self._mu:
                    self._mu.notify_all()
                return
            except Exception as e:  # worker survives; the error is retried
                log.exception("background compaction failed")
                self.bg_error = e
                progressed = False
                time.sleep(backoff)
                backoff = min(backoff * 2, 1.0)
            if not progressed:
                with self._mu:
                    if self._stop:
                        return
                    self._mu.wait(0.05)

    def wait_idle(self, majors: bool = True, timeout: float | None = None) -> None:
        """Block until queued memtables (and, if ``majors``, due compactions) are done."""
        if self._worker is None:
            self._drain_inline()
            return
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            with self._mu:
                if isinstance(self.bg_error, SimulatedCrash):
                    raise EngineClosed("compaction worker crashed")
                busy = len(self._imm) > 0 or (
                    majors
                    and (
                        pick_compaction(self.versions.current, self.config.l0_limit_files, dict(self.versions.cursors))
                        is not None
                        or bool(self._pending)
                    )
                )
                if not busy:
                    return
                self._mu.notify_all()
                self._mu.wait(0.02)
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError("engine did not become idle")

    def compact_all(self) -> None:
        """Flush, push every level down to the deepest populated one, then re-merge that level."""
        self.flush()
        with self._compaction_lock:
            v = self.versions.current
            bottom = max((n for n in range(1, v.max_level + 1) if v.levels[n]), default=1)
            for n in range(bottom):
                v = self.versions.current
                if not v.levels[n]:
                    continue
                upper = list(v.levels[n])
                lo = min(h.smallest for h in upper)
                hi = max(h.largest for h in upper)
                self._run_major(CompactionJob(n, upper, v.overlapping(n + 1, lo, hi)))
            # Re-merge the bottom level onto itself so variants kept for
            # since-released snapshots, and bottom tombstones, are pruned.
            v = self.versions.current
            if v.levels[bottom]:
                self._run_major(CompactionJob(bottom - 1, [], list(v.levels[bottom])))
            self._collect_garbage()

    # -- read path ---------------------------------------------------------

    def _acquire(self, snapshot: Snapshot | None) -> _ReadView:
        if snapshot is not None and snapshot.released:
            raise SnapshotReleased("snapshot has been released")
        with self._mu:
            self._ensure_open()
            v = self.versions.current
            self._pins[id(v)] += 1
            self._pinned_versions[id(v)] = v
            mems = [self._mem] + self._imm.newest_first()
            seq = self._last_seq if snapshot is None else snapshot.seq
        return _ReadView(v, mems, seq)

    def _release(self, view: _ReadView) -> None:
        with self._mu:
            key = id(view.version)
            self._pins[key] -= 1
            if self._pins[key] <= 0:
                del self._pins[key]
                del self._pinned_versions[key]
                if self._pending:
                    self._mu.notify_all()

    def get_record(self, key: bytes, snapshot: Snapshot | None = None) -> KvRecord | None:
        """The newest visible record for ``key`` (a Delete record included)."""
        check_key(key)
        view = self._acquire(snapshot)
        try:
            seq = view.seq
            for m in view.memtables:
                rec = m.get(key, seq)
                if rec is not None:
                    return rec
            v = view.version
            for level in range(v.max_level + 1):
                for h in v.candidates_for_key(level, key):
                    rec = self.fmt.lookup(h, key, seq)
                    if rec is not None:
                        return rec
            return None
        finally:
            self._release(view)

    def get(self, key: bytes, snapshot: Snapshot | None = None) -> bytes | None:
        """Value for ``key``, or ``None`` if it is absent or deleted."""
        rec = self.get_record(key, snapshot)
        if rec is None or rec.op == DELETE:
            return None
        return rec.value

    def scan(
        self, lo: bytes = b"", hi: bytes | None = None, snapshot: Snapshot | None = None
    ) -> Iterator[tuple[bytes, bytes]]:
        """Live ``(key, value)`` pairs with ``lo <= key < hi`` in key order."""
        if hi is not None and hi < lo:
            raise ValueError("scan requires lo <= hi")
        view = self._acquire(snapshot)
        try:
            return iter(self._collect_range(view, lo, hi))
        finally:
            self._release(view)

    def _collect_range(self, view: _ReadView, lo: bytes, hi: bytes | None) -> list[tuple[bytes, bytes]]:
        seq = view.seq
        decided: dict[bytes, KvRecord] = {}
        for m in view.memtables:
            for key, rec in m.range(lo, hi, seq):
                decided.setdefault(key, rec)
        per_level = view.version.candidates_for_range(lo, hi)
        for handles in per_level:
            for h in handles:
                for key, load in self.fmt.scan_entries(h, lo, hi):
                    if key in decided:
                        continue
                    rec = newest_visible(load(), seq)
                    if rec is not None:
                        decided[key] = rec
        return [(k, decided[k].value) for k in sorted(decided) if decided[k].op != DELETE]

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> Snapshot:
        with self._mu:
            self._ensure_open()
            seq = self._last_seq
            self._snapshots[seq] += 1
        return Snapshot(self, seq)

    snapshot_create = snapshot

    def snapshot_release(self, s: Snapshot) -> None:
        with self._mu:
            if s.released:
                raise SnapshotReleased("snapshot already released")
            s.released = True
            self._snapshots[s.seq] -= 1
            if self._snapshots[s.seq] <= 0:
                del self._snapshots[s.seq]

    @property
    def snapshot_floor(self) -> int | None:
        return self._snapshot_floor()

    # -- introspection -----------------------------------------------------

    @property
    def last_seq(self) -> int:
        return self._last_seq

    @property
    def version(self) -> Version:
        return self.versions.current

    def table_records(self) -> Iterator[tuple[SstDirHandle, bytes, list[KvRecord]]]:
        """Every on-disk (handle, key, records) triple of the current version."""
        view = self._acquire(None)
        try:
            for h in view.version.handles():
                for key, recs in self.fmt.table_records(h):
                    yield h, key, recs
        finally:
            self._release(view)

    def counters(self):
        return self.root.counters_snapshot()

    # -- shutdown ----------------------------------------------------------

    def _stop_worker(self) -> None:
        with self._mu:
            self._stop = True
            self._mu.notify_all()
        if self._worker is not None and self._worker is not threading.current_thread():
            self._worker.join()
        self._worker = None

    def close(self) -> None:
        """Flush (if configured), stop the worker and sync the current log."""
        if self._closed:
            return
        crashed = isinstance(self.bg_error, SimulatedCrash)
        try:
            if self.config.flush_on_close and not crashed:
                with self._write_lock:
                    if len(self._mem):
                        self._seal()
                self.wait_idle(majors=False)
            self._stop_worker()
            if not crashed:
                self._collect_garbage()
                self.retirer.retire_due(time.time())
                if not self._wal.sealed:
                    self._wal.seal_and_sync()
                if self.root.sync_enabled:
                    self.root.sync_dir(".")
        finally:
            self._closed = True
            self._stop_worker()
            self._wal.close()
            self.versions.close()

    def kill(self) -> None:
        """Drop the engine as if the process died: no flush, no sync."""
        self._stop_worker()
        self._closed = True
        self._wal.close()
        self.versions.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_engine(path: str, **kwargs) -> Engine:
    return Engine.open(EngineConfig(path=path, **kwargs))
