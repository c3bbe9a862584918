import os
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dentrykv import _purepy, kernels

try:
    from dentrykv import _speedups
except ImportError:  # pragma: no cover
    _speedups = None

IMPLS = [_purepy] + ([_speedups] if _speedups else [])


@pytest.mark.parametrize("mod", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_crc32c_check_values(mod):
    assert mod.crc32c(b"123456789") == 0xE3069283
    assert mod.crc32c(b"") == 0
    assert mod.crc32c(b"\x00" * 32) == 0x8A9136AA
    # incremental equals one-shot
    assert mod.crc32c(b"6789", mod.crc32c(b"12345")) == 0xE3069283


@pytest.mark.parametrize("mod", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_fnv1a64_check_values(mod):
    assert mod.fnv1a64(b"") == 0xCBF29CE484222325
    assert mod.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert mod.fnv1a64(b"foobar") == 0x85944171F73967E8


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _speedups is not None:
        assert kernels.BACKEND == "cython"


def test_pure_python_env_forces_fallback():
    code = "from dentrykv import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, DENTRYKV_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


needs_ext = pytest.mark.skipif(_speedups is None, reason="compiled extension not built")


@needs_ext
@given(st.binary(max_size=300), st.integers(0, 2**32 - 1))
def test_crc_parity(data, seed):
    assert _speedups.crc32c(data, seed) == _purepy.crc32c(data, seed)


@needs_ext
@given(st.binary(max_size=100))
def test_fnv_parity(data):
    assert _speedups.fnv1a64(data) == _purepy.fnv1a64(data)


@needs_ext
@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=50), st.integers(1, 12))
def test_bloom_parity(keys, k):
    m = max(64, len(keys) * 10)
    a, b = bytearray((m + 7) // 8), bytearray((m + 7) // 8)
    for key in keys:
        _speedups.bloom_add(a, m, k, key)
        _purepy.bloom_add(b, m, k, key)
    assert a == b
    for key in keys + [b"absent" + key for key in keys]:
        assert _speedups.bloom_query(a, m, k, key) == _purepy.bloom_query(b, m, k, key)


@needs_ext
@given(st.binary(max_size=120))
def test_key_codec_parity(key):
    enc = _purepy.encode_key(key)
    assert _speedups.encode_key(key) == enc
    assert _speedups.decode_key(enc) == _purepy.decode_key(enc)


@needs_ext
@given(st.text(alphabet="%AaZz09_.-+=@/2F", max_size=12))
def test_decode_parity_on_arbitrary_names(name):
    assert _speedups.decode_key(name) == _purepy.decode_key(name)
