# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: CRC32C, FNV-1a-64, Bloom probing, key encoding.

Bit-identical to ``dentrykv._purepy``; see that module for the contracts.
"""

from libc.stdint cimport uint8_t, uint32_t, uint64_t
from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING

cdef uint32_t POLY = <uint32_t>0x82F63B78U
cdef uint32_t ONES = <uint32_t>0xFFFFFFFFU
cdef uint64_t FNV_OFFSET = <uint64_t>0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = <uint64_t>0x100000001B3ULL

cdef uint32_t _T[8][256]
cdef bint _SAFE[256]
cdef char _HEX[16]


cdef void _init_tables():
    cdef uint32_t c
    cdef int n, j, t
    for n in range(256):
        c = n
        for j in range(8):
            if c & 1:
                c = (c >> 1) ^ POLY
            else:
                c = c >> 1
        _T[0][n] = c
    for n in range(256):
        c = _T[0][n]
        for t in range(1, 8):
            c = _T[0][c & 0xFF] ^ (c >> 8)
            _T[t][n] = c
    for n in range(256):
        _SAFE[n] = ((n >= 0x41 and n <= 0x5A) or (n >= 0x61 and n <= 0x7A)
                    or (n >= 0x30 and n <= 0x39) or n == 0x5F or n == 0x2D
                    or n == 0x2B or n == 0x3D or n == 0x40)
    for n in range(16):
        _HEX[n] = b"0123456789ABCDEF"[n]


_init_tables()


cdef inline uint32_t _crc(const uint8_t* p, Py_ssize_t n, uint32_t crc) nogil:
    cdef uint32_t c = crc ^ ONES
    cdef uint32_t lo, hi
    while n >= 8:
        lo = c ^ (<uint32_t>p[0] | (<uint32_t>p[1] << 8) | (<uint32_t>p[2] << 16) | (<uint32_t>p[3] << 24))
        hi = <uint32_t>p[4] | (<uint32_t>p[5] << 8) | (<uint32_t>p[6] << 16) | (<uint32_t>p[7] << 24)
        c = (_T[7][lo & 0xFF] ^ _T[6][(lo >> 8) & 0xFF] ^ _T[5][(lo >> 16) & 0xFF] ^ _T[4][lo >> 24]
             ^ _T[3][hi & 0xFF] ^ _T[2][(hi >> 8) & 0xFF] ^ _T[1][(hi >> 16) & 0xFF] ^ _T[0][hi >> 24])
        p += 8
        n -= 8
    while n > 0:
        c = _T[0][(c ^ p[0]) & 0xFF] ^ (c >> 8)
        p += 1
        n -= 1
    return c ^ ONES


def crc32c(const uint8_t[::1] data, uint32_t crc=0):
    cdef Py_ssize_t n = data.shape[0]
    if n == 0:
        return crc
    return _crc(&data[0], n, crc)


cdef inline uint64_t _fnv(const uint8_t* p, Py_ssize_t n, uint64_t h) nogil:
    cdef Py_ssize_t i
    for i in range(n):
        h = (h ^ p[i]) * FNV_PRIME
    return h


def fnv1a64(const uint8_t[::1] data):
    cdef Py_ssize_t n = data.shape[0]
    if n == 0:
        return FNV_OFFSET
    return _fnv(&data[0], n, FNV_OFFSET)


cdef inline void _hashes(const uint8_t[::1] key, uint64_t* h1, uint64_t* h2):
    cdef Py_ssize_t n = key.shape[0]
    cdef uint64_t h = FNV_OFFSET
    if n > 0:
        h = _fnv(&key[0], n, h)
    h1[0] = h
    h2[0] = ((h ^ 0xFF) * FNV_PRIME) | 1


def bloom_add(uint8_t[::1] bits, uint64_t m, int k, const uint8_t[::1] key):
    cdef uint64_t h1, h2, pos
    cdef int i
    _hashes(key, &h1, &h2)
    for i in range(k):
        pos = (h1 + <uint64_t>i * h2) % m
        bits[pos >> 3] |= <uint8_t>(1 << (pos & 7))


def bloom_query(const uint8_t[::1] bits, uint64_t m, int k, const uint8_t[::1] key):
    cdef uint64_t h1, h2, pos
    cdef int i
    _hashes(key, &h1, &h2)
    for i in range(k):
        pos = (h1 + <uint64_t>i * h2) % m
        if not (bits[pos >> 3] & (1 << (pos & 7))):
            return False
    return True


def encode_key(bytes key):
    cdef const uint8_t* p = <const uint8_t*>PyBytes_AS_STRING(key)
    cdef Py_ssize_t n = len(key), i, j = 0, extra = 0
    for i in range(n):
        if not _SAFE[p[i]]:
            extra += 2
    if extra == 0:
        return key.decode("ascii")
    out = PyBytes_FromStringAndSize(NULL, n + extra)
    cdef char* q = PyBytes_AS_STRING(out)
    for i in range(n):
        if _SAFE[p[i]]:
            q[j] = p[i]
            j += 1
        else:
            q[j] = 0x25
            q[j + 1] = _HEX[p[i] >> 4]
            q[j + 2] = _HEX[p[i] & 0xF]
            j += 3
    return out.decode("ascii")


cdef inline int _unhex(uint8_t c):
    if c >= 0x30 and c <= 0x39:
        return c - 0x30
    if c >= 0x41 and c <= 0x46:
        return c - 0x41 + 10
    return -1


def decode_key(str name):
    try:
        raw = name.encode("ascii")
    except UnicodeEncodeError:
        return None
    cdef const uint8_t* p = <const uint8_t*>PyBytes_AS_STRING(raw)
    cdef Py_ssize_t n = len(raw), i = 0, j = 0
    cdef int hi, lo, b
    if n == 0:
        return None
    out = PyBytes_FromStringAndSize(NULL, n)
    cdef char* q = PyBytes_AS_STRING(out)
    while i < n:
        if p[i] == 0x25:
            if i + 2 >= n:
                return None
            hi = _unhex(p[i + 1])
            lo = _unhex(p[i + 2])
            if hi < 0 or lo < 0:
                return None
            b = hi * 16 + lo
            if _SAFE[b]:
                return None
            q[j] = <char>b
            i += 3
        elif _SAFE[p[i]]:
            q[j] = p[i]
            i += 1
        else:
            return None
        j += 1
    return out[:j]
