"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import random
import timeit

from dentrykv import _purepy

try:
    from dentrykv import _speedups
except ImportError:
    _speedups = None


def workloads(mod, rng):
    blob = rng.randbytes(64 * 1024)
    keys = [rng.randbytes(16) for _ in range(2000)]
    names = [k.hex().encode() + b"/x y" for k in keys[:500]]
    encoded = [mod.encode_key(n) for n in names]
    m = len(keys) * 10
    bits = bytearray((m + 7) // 8)
    return {
        "crc32c 64KiB": lambda: mod.crc32c(blob),
        "fnv1a64 x2000": lambda: [mod.fnv1a64(k) for k in keys],
        "bloom_add x2000": lambda: [mod.bloom_add(bits, m, 7, k) for k in keys],
        "bloom_query x2000": lambda: [mod.bloom_query(bits, m, 7, k) for k in keys],
        "encode_key x500": lambda: [mod.encode_key(n) for n in names],
        "decode_key x500": lambda: [mod.decode_key(s) for s in encoded],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    mods = [("python", _purepy)] + ([("cython", _speedups)] if _speedups else [])
    results = {}
    for label, mod in mods:
        for name, fn in workloads(mod, random.Random(7)).items():
            results.setdefault(name, {})[label] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, r in results.items():
        py, cy = r["python"], r.get("cython")
        if cy is None:
            print(f"{name:<20}{py * 1e3:>12.3f}{'n/a':>12}{'':>10}")
        else:
            print(f"{name:<20}{py * 1e3:>12.3f}{cy * 1e3:>12.3f}{py / cy:>9.1f}x")
    if _speedups is None:
        print("compiled extension not built; only the fallback was timed", os.linesep)


if __name__ == "__main__":
    main()
