import random

from hypothesis import given
from hypothesis import strategies as st

from dentrykv.bloom import BloomFilter, expected_fp_rate, probe_positions


def _bit(bits, i):
    return (bits[i >> 3] >> (i & 7)) & 1


def test_empty_filter_short_circuits():
    f = BloomFilter.build([])
    assert f.m == 0
    assert not f.may_contain(b"anything")


def test_single_key():
    f = BloomFilter.build([b"solo"])
    assert f.m == 64
    assert f.may_contain(b"solo")


def test_bits_match_recomputed_probes():
    keys = [b"k%d" % i for i in range(200)]
    f = BloomFilter.build(keys, 10, 7)
    expected = bytearray((f.m + 7) // 8)
    for k in keys:
        for p in probe_positions(k, f.m, 7):
            expected[p >> 3] |= 1 << (p & 7)
    assert f.bits == expected


def test_query_vs_probe_oracle():
    rng = random.Random(2)
    f = BloomFilter.build([rng.randbytes(8) for _ in range(300)], 10, 7)
    for _ in range(1000):
        q = rng.randbytes(8)
        oracle = all(_bit(f.bits, p) for p in probe_positions(q, f.m, f.k))
        assert f.may_contain(q) == oracle


def test_any_clear_probe_bit_means_absent():
    f = BloomFilter.build([b"x"], 10, 7)
    for p in probe_positions(b"x", f.m, 7):
        bits = bytearray(f.bits)
        bits[p >> 3] &= ~(1 << (p & 7)) & 0xFF
        assert not BloomFilter(f.m, f.k, bits).may_contain(b"x")


@given(st.lists(st.binary(min_size=1, max_size=24), min_size=1, max_size=100))
def test_no_false_negatives(keys):
    f = BloomFilter.build(keys)
    assert all(f.may_contain(k) for k in keys)


def test_analytic_rate():
    assert abs(expected_fp_rate(10_000, 100_000, 7) - 0.0082) < 0.0002
