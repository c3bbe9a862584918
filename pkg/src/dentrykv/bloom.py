"""SST-directory-level Bloom filter.

Probe ``i`` (``0 <= i < k``) of a key sets bit
``((h1 + i*h2) mod 2**64) mod m`` where ``h1 = FNV-1a-64(key)`` and
``h2 = FNV-1a-64(key + b"\\xff") | 1``.  Bit ``p`` lives in byte ``p >> 3``
at position ``p & 7`` (LSB first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .kernels import bloom_add, bloom_query, fnv1a64

DEFAULT_BITS_PER_KEY = 10
DEFAULT_NUM_HASHES = 7
MIN_BITS = 64
_MASK64 = 2**64 - 1


@dataclass
class BloomFilter:
    m: int
    k: int
    bits: bytearray

    @classmethod
    def build(
        cls, keys, bits_per_key: int = DEFAULT_BITS_PER_KEY, num_hashes: int = DEFAULT_NUM_HASHES
    ) -> "BloomFilter":
        keys = list(keys)
        if not keys:
            return cls(0, num_hashes, bytearray())
        m = max(MIN_BITS, len(keys) * bits_per_key)
        bits = bytearray((m + 7) // 8)
        for key in keys:
            bloom_add(bits, m, num_hashes, key)
        return cls(m, num_hashes, bits)

    def may_contain(self, key: bytes) -> bool:
        if self.m == 0:
            return False
        return bloom_query(self.bits, self.m, self.k, key)

    def __contains__(self, key: bytes) -> bool:
        return self.may_contain(key)


def probe_positions(key: bytes, m: int, k: int) -> list[int]:
    """Reference probe computation (independent of the kernels' probing loop)."""
    h1 = fnv1a64(key)
    h2 = fnv1a64(key + b"\xff") | 1
    return [((h1 + i * h2) & _MASK64) % m for i in range(k)]


def expected_fp_rate(n: int, m: int, k: int) -> float:
    return (1.0 - math.exp(-k * n / m)) ** k
