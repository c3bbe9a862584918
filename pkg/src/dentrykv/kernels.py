"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``DENTRYKV_PURE_PYTHON=1`` to force the fallback (used by the parity
tests and the kernel benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("DENTRYKV_PURE_PYTHON") == "1":
    from . import _purepy as _impl
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        from . import _purepy as _impl

BACKEND = "cython" if _impl.__name__.endswith("_speedups") else "python"

crc32c = _impl.crc32c
fnv1a64 = _impl.fnv1a64
bloom_add = _impl.bloom_add
bloom_query = _impl.bloom_query
encode_key_raw = _impl.encode_key
decode_key_raw = _impl.decode_key

__all__ = [
    "BACKEND",
    "crc32c",
    "fnv1a64",
    "bloom_add",
    "bloom_query",
    "encode_key_raw",
    "decode_key_raw",
]
