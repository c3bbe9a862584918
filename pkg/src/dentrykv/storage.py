"""Instrumented storage layer.

Every file and directory operation the engines perform goes through a
:class:`StoreRoot`.  It confines paths to the database root, counts bytes and
calls (the basis of write-amplification reporting) and hosts the fault
injector used by the crash-consistency tests.
"""

from __future__ import annotations

import errno
import os
import posixpath
import threading
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Callable

from .errors import (
    CrossDevice,
    DirExists,
    DirMissing,
    DstExists,
    SimulatedCrash,
    SrcMissing,
    SyncFailed,
)

_COUNTER_NAMES = (
    "data_bytes_written",
    "files_created",
    "links_created",
    "entries_removed",
    "dirs_created",
    "dirs_removed",
    "syncs",
    "bytes_read",
    "renames",
)


@dataclass
class IoCounters:
    data_bytes_written: int = 0
    files_created: int = 0
    links_created: int = 0
    entries_removed: int = 0
    dirs_created: int = 0
    dirs_removed: int = 0
    syncs: int = 0
    bytes_read: int = 0
    renames: int = 0
    # data_bytes_written split by what was written: wal, manifest, kv, meta, sst, current
    bytes_by_kind: Counter = field(default_factory=Counter)

    def copy(self) -> "IoCounters":
        c = IoCounters(**{n: getattr(self, n) for n in _COUNTER_NAMES})
        c.bytes_by_kind = Counter(self.bytes_by_kind)
        return c

    def __sub__(self, other: "IoCounters") -> "IoCounters":
        c = IoCounters(**{n: getattr(self, n) - getattr(other, n) for n in _COUNTER_NAMES})
        kinds = set(self.bytes_by_kind) | set(other.bytes_by_kind)
        c.bytes_by_kind = Counter({k: self.bytes_by_kind[k] - other.bytes_by_kind[k] for k in kinds})
        return c

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "bytes_by_kind"}
        d["bytes_by_kind"] = dict(self.bytes_by_kind)
        return d

    def estimated_metadata_bytes(self, per_entry: int = 256) -> int:
        """Rough filesystem metadata cost: ``per_entry`` bytes per namespace op.

        Optional reporting aid only; nothing in the engine depends on it.
        """
        ops = (
            self.files_created
            + self.links_created
            + self.entries_removed
            + self.dirs_created
            + self.dirs_removed
            + self.renames
        )
        return ops * per_entry


class FaultInjector:
    """Arms named crash points and sync failures.

    Engine code calls :meth:`point` at stage boundaries; an armed point raises
    :class:`SimulatedCrash`.  ``hits`` records every point passed so tests can
    enumerate the boundaries a run actually crosses.
    """

    def __init__(self) -> None:
        self._armed: dict[str, int] = {}
        self._sync_fail: list[Callable[[str], bool]] = []
        self._torn: dict[str, int] = {}
        self.hits: list[str] = []
        self._lock = threading.Lock()

    def arm(self, name: str, skip: int = 0) -> None:
        """Crash at the ``skip``-th future pass through ``name`` (0 = next)."""
        with self._lock:
            self._armed[name] = skip

    def disarm_all(self) -> None:
        with self._lock:
            self._armed.clear()
            self._sync_fail.clear()
            self._torn.clear()

    def fail_sync(self, predicate: Callable[[str], bool] | str) -> None:
        if isinstance(predicate, str):
            prefix = predicate
            predicate = lambda rel: rel.startswith(prefix)  # noqa: E731
        with self._lock:
            self._sync_fail.append(predicate)

    def tear_next_append(self, prefix: str, keep: int) -> None:
        """Next append to a file under ``prefix`` writes ``keep`` bytes, then crashes."""
        with self._lock:
            self._torn[prefix] = keep

    def point(self, name: str) -> None:
        with self._lock:
            self.hits.append(name)
            left = self._armed.get(name)
            if left is None:
                return
            if left > 0:
                self._armed[name] = left - 1
                return
            del self._armed[name]
        raise SimulatedCrash(name)

    def _sync_should_fail(self, rel: str) -> bool:
        with self._lock:
            return any(p(rel) for p in self._sync_fail)

    def _torn_keep(self, rel: str) -> int | None:
        with self._lock:
            for prefix, keep in self._torn.items():
                if rel.startswith(prefix):
                    del self._torn[prefix]
                    return keep
        return None


class AppendFile:
    """An open, append-only file (write-ahead logs, manifests)."""

    def __init__(self, root: "StoreRoot", rel: str, kind: str, fd: int, size: int):
        self.root = root
        self.rel = rel
        self.kind = kind
        self._fd = fd
        self.size = size

    def append(self, data: bytes) -> None:
        keep = self.root.faults._torn_keep(self.rel)
        if keep is not None:
            self._write(data[:keep])
            raise SimulatedCrash(f"torn-append:{self.rel}")
        self._write(data)

    def _write(self, data: bytes) -> None:
        view = memoryview(data)
        while view:
            n = os.write(self._fd, view)
            view = view[n:]
        self.size += len(data)
        self.root._count_write(self.kind, len(data))

    def sync(self) -> None:
        self.root._sync_fd(self._fd, self.rel)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    @property
    def closed(self) -> bool:
        return self._fd < 0


class StoreRoot:
    """A database root directory with instrumented operations.

    All paths passed to methods are relative to ``root_path`` and use ``/``.
    """

    def __init__(self, root_path: str, sync_enabled: bool = True):
        self.root_path = os.path.abspath(root_path)
        self.sync_enabled = sync_enabled
        self.counters = IoCounters()
        self.faults = FaultInjector()
        self.observers: list[Callable[[str], None]] = []
        self._lock = threading.Lock()

    # -- bookkeeping -------------------------------------------------------

    def _abs(self, rel: str) -> str:
        norm = posixpath.normpath(rel)
        if norm.startswith("/") or norm == ".." or norm.startswith("../"):
            raise ValueError(f"path escapes store root: {rel!r}")
        path = self.root_path if norm == "." else os.path.join(self.root_path, norm)
        for obs in self.observers:
            obs(path)
        return path

    def _bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            setattr(self.counters, name, getattr(self.counters, name) + n)

    def _count_write(self, kind: str, n: int) -> None:
        with self._lock:
            self.counters.data_bytes_written += n
            self.counters.bytes_by_kind[kind] += n

    def counters_snapshot(self) -> IoCounters:
        with self._lock:
            return self.counters.copy()

    def reset_counters(self) -> None:
        with self._lock:
            self.counters = IoCounters()

    # -- files -------------------------------------------------------------

    def write_file(self, rel: str, data: bytes, kind: str, exclusive: bool = True) -> None:
        """Create ``rel`` and write ``data`` to it (no sync)."""
        flags = os.O_WRONLY | os.O_CREAT | (os.O_EXCL if exclusive else os.O_TRUNC)
        fd = os.open(self._abs(rel), flags, 0o644)
        self._bump("files_created")
        try:
            view = memoryview(data)
            while view:
                n = os.write(fd, view)
                view = view[n:]
        finally:
            os.close(fd)
        self._count_write(kind, len(data))

    def open_append(self, rel: str, kind: str) -> AppendFile:
        path = self._abs(rel)
        existed = os.path.exists(path)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        if not existed:
            self._bump("files_created")
        return AppendFile(self, rel, kind, fd, os.fstat(fd).st_size)

    def read_file(self, rel: str) -> bytes:
        with open(self._abs(rel), "rb") as f:
            data = f.read()
        self._bump("bytes_read", len(data))
        return data

    def read_range(self, rel: str, offset: int, length: int) -> tuple[bytes, int]:
        """Read up to ``length`` bytes at ``offset``; also return the file size."""
        fd = os.open(self._abs(rel), os.O_RDONLY)
        try:
            size = os.fstat(fd).st_size
            data = os.pread(fd, length, offset)
        finally:
            os.close(fd)
        self._bump("bytes_read", len(data))
        return data, size

    def file_size(self, rel: str) -> int:
        return os.stat(self._abs(rel)).st_size

    def exists(self, rel: str) -> bool:
        return os.path.exists(self._abs(rel))

    def is_dir(self, rel: str) -> bool:
        return os.path.isdir(self._abs(rel))

    def hard_link(self, src_rel: str, dst_rel: str) -> None:
        src, dst = self._abs(src_rel), self._abs(dst_rel)
        try:
            os.link(src, dst)
        except FileExistsError as e:
            raise DstExists(errno.EEXIST, "link destination exists", dst_rel) from e
        except FileNotFoundError as e:
            if not os.path.exists(src):
                raise SrcMissing(errno.ENOENT, "link source missing", src_rel) from e
            raise DirMissing(errno.ENOENT, "link target directory missing", dst_rel) from e
        except OSError as e:
            if e.errno == errno.EXDEV:
                raise CrossDevice(errno.EXDEV, "hard link across devices", dst_rel) from e
            raise
        self._bump("links_created")

    def remove(self, rel: str) -> None:
        os.unlink(self._abs(rel))
        self._bump("entries_removed")

    def rename(self, src_rel: str, dst_rel: str) -> None:
        os.replace(self._abs(src_rel), self._abs(dst_rel))
        self._bump("renames")

    # -- directories -------------------------------------------------------

    def mkdir(self, rel: str) -> None:
        try:
            os.mkdir(self._abs(rel))
        except FileExistsError as e:
            raise DirExists(errno.EEXIST, "directory exists", rel) from e
        self._bump("dirs_created")

    def rmdir(self, rel: str) -> None:
        os.rmdir(self._abs(rel))
        self._bump("dirs_removed")

    def list_dir(self, rel: str) -> list[str]:
        try:
            return os.listdir(self._abs(rel))
        except (FileNotFoundError, NotADirectoryError) as e:
            raise DirMissing(errno.ENOENT, "no such directory", rel) from e

    def remove_tree(self, rel: str) -> None:
        """Remove a directory and its (flat) entries one call at a time."""
        for name in self.list_dir(rel):
            child = f"{rel}/{name}"
            if os.path.isdir(self._abs(child)):
                self.remove_tree(child)
            else:
                self.remove(child)
        self.rmdir(rel)

    # -- durability --------------------------------------------------------

    def _sync_fd(self, fd: int, rel: str) -> None:
        if not self.sync_enabled:
            return
        if self.faults._sync_should_fail(rel):
            raise SyncFailed(errno.EIO, "injected sync failure", rel)
        try:
            os.fsync(fd)
        except OSError as e:
            raise SyncFailed(e.errno, str(e), rel) from e
        self._bump("syncs")

    def sync_file(self, rel: str) -> None:
        if not self.sync_enabled:
            return
        fd = os.open(self._abs(rel), os.O_RDONLY)
        try:
            self._sync_fd(fd, rel)
        finally:
            os.close(fd)

    def sync_dir(self, rel: str) -> None:
        if not self.sync_enabled:
            return
        fd = os.open(self._abs(rel), os.O_RDONLY | getattr(os, "O_DIRECTORY", 0))
        try:
            self._sync_fd(fd, rel)
        finally:
            os.close(fd)


def open_root(path: str, sync_enabled: bool = True) -> StoreRoot:
    """Open (creating if needed) a database root with zeroed counters."""
    if os.path.exists(path) and not os.path.isdir(path):
        raise NotADirectoryError(errno.ENOTDIR, "store root is not a directory", path)
    os.makedirs(path, exist_ok=True)
    return StoreRoot(path, sync_enabled)
