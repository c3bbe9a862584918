"""Exception hierarchy for dentrykv."""

from __future__ import annotations


class DentryKVError(Exception):
    """Base class for store errors."""


class KeyTooLong(DentryKVError, ValueError):
    """Encoded key exceeds the 255-byte filename limit.

    Carries the offending key and a suggested shortened key.
    """

    def __init__(self, key: bytes, encoded_len: int, suggestion: bytes):
        self.key = key
        self.encoded_len = encoded_len
        self.suggestion = suggestion
        super().__init__(
            f"key encodes to {encoded_len} bytes (limit 255); try {suggestion!r}"
        )


class EmptyKey(DentryKVError, ValueError):
    pass


class MalformedName(DentryKVError, ValueError):
    pass


class Corrupt(DentryKVError):
    """A record stream failed its checksum or was truncated.

    ``records`` holds the valid prefix that decoded before the damage.
    """

    def __init__(self, prefix_count: int, records=(), where: str = ""):
        self.prefix_count = prefix_count
        self.records = list(records)
        super().__init__(f"corrupt data after {prefix_count} valid record(s) {where}".rstrip())


class Corruption(DentryKVError):
    """The store as a whole is inconsistent (e.g. a committed directory is missing)."""


class SyncFailed(DentryKVError, OSError):
    pass


class SrcMissing(DentryKVError, FileNotFoundError):
    pass


class DstExists(DentryKVError, FileExistsError):
    pass


class CrossDevice(DentryKVError, OSError):
    pass


class DirMissing(DentryKVError, FileNotFoundError):
    pass


class DirExists(DentryKVError, FileExistsError):
    pass


class Sealed(DentryKVError):
    """Write attempted against a sealed memtable or log."""


class EngineClosed(DentryKVError):
    pass


class SnapshotReleased(DentryKVError):
    pass


class SimulatedCrash(BaseException):
    """Raised at an armed crash point.

    Derives from BaseException so that ordinary ``except Exception`` error
    handling inside the engine cannot swallow it.
    """

    def __init__(self, point: str):
        self.point = point
        super().__init__(point)
