"""db_bench-style workloads and the ``dentrykv-bench`` command.

Keys are fixed-width zero-padded decimal counters.  Storage counters are
reset at every phase boundary and read after the engine has finished the
background work the phase caused, so each phase is charged for its own
compactions.  ``write_amp`` is bytes handed to the filesystem divided by
user payload bytes (key + value per put, key per delete).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import random
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field

from .engine import Engine, EngineConfig
from .errors import DentryKVError
from .storage import IoCounters

BENCHMARKS = ("fillseq", "fillrandom", "readseq", "readrandom", "wdw", "wdr")
DEFAULT_BENCH_L0_LIMIT = 500

CSV_HEADER = (
    "benchmark",
    "engine",
    "phase",
    "ops",
    "micros_per_op",
    "user_bytes",
    "data_bytes_written",
    "write_amp",
    "files_created",
    "links_created",
    "entries_removed",
    "syncs",
    "bytes_read",
)


@dataclass
class WorkloadSpec:
    benchmark: str
    num: int = 100_000
    key_size: int = 16
    value_size: int = 100
    delete_pct: float = 50.0
    seed: int = 1
    engine_kind: str = "dentry"
    db: str | None = None
    sync: bool = True
    l0_limit: int = DEFAULT_BENCH_L0_LIMIT
    memtable_bytes: int | None = None
    value_cache_bytes: int | None = None
    handle_cache_entries: int | None = None
    inline_compaction: bool = False

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}; choose from {', '.join(BENCHMARKS)}")
        if self.key_size < 8:
            raise ValueError("key_size must be >= 8")
        if len(str(2 * self.num)) > self.key_size:
            raise ValueError(f"key_size {self.key_size} too small for num={self.num}")
        if self.num < 0 or self.value_size < 0 or not 0 <= self.delete_pct <= 100:
            raise ValueError("num, value_size and delete_pct must be in range")

    def engine_config(self, path: str) -> EngineConfig:
        cfg = EngineConfig(
            path=path,
            engine_kind=self.engine_kind,
            l0_limit_files=self.l0_limit,
            sstdir_file_target=min(EngineConfig.sstdir_file_target, self.l0_limit),
            sync_enabled=self.sync,
            background_compaction=not self.inline_compaction,
        )
        if self.memtable_bytes is not None:
            cfg.memtable_bytes = self.memtable_bytes
        if self.value_cache_bytes is not None:
            cfg.value_cache_bytes = self.value_cache_bytes
        if self.handle_cache_entries is not None:
            cfg.handle_cache_entries = self.handle_cache_entries
        return cfg


@dataclass
class PhaseResult:
    name: str
    ops: int
    seconds: float
    user_bytes: int
    counters: IoCounters
    errors: int = 0

    @property
    def micros_per_op(self) -> float:
        return self.seconds * 1e6 / self.ops if self.ops else 0.0

    @property
    def data_bytes_written(self) -> int:
        return self.counters.data_bytes_written

    @property
    def write_amp(self) -> float | None:
        if not self.user_bytes:
            return None
        return self.data_bytes_written / self.user_bytes


@dataclass
class BenchReport:
    benchmark: str
    engine: str
    phases: list[PhaseResult] = field(default_factory=list)

    @property
    def overall(self) -> PhaseResult:
        total = IoCounters()
        for p in self.phases:
            total = _add(total, p.counters)
        return PhaseResult(
            "overall",
            sum(p.ops for p in self.phases),
            sum(p.seconds for p in self.phases),
            sum(p.user_bytes for p in self.phases),
            total,
            sum(p.errors for p in self.phases),
        )

    def phase(self, name: str) -> PhaseResult:
        for p in self.phases:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def errors(self) -> int:
        return sum(p.errors for p in self.phases)


def _add(a: IoCounters, b: IoCounters) -> IoCounters:
    zero = IoCounters()
    return a - (zero - b)


def make_key(i: int, key_size: int) -> bytes:
    return str(i).zfill(key_size).encode()


class _ValueSource:
    """Deterministic value bytes: slices of one seeded random pool."""

    def __init__(self, seed: int, value_size: int):
        self.size = value_size
        pool_len = max(1 << 20, 4 * value_size)
        self.pool = random.Random(seed ^ 0x5EED).randbytes(pool_len)
        self.span = pool_len - value_size

    def __call__(self, i: int) -> bytes:
        off = (i * 7919) % (self.span + 1)
        return self.pool[off : off + self.size]


def _is_clean(path: str) -> bool:
    return not os.path.exists(path) or not os.listdir(path)


def run_workload(spec: WorkloadSpec) -> BenchReport:
    spec.validate()
    own_dir = spec.db is None
    path = tempfile.mkdtemp(prefix="dentrykv-bench-") if own_dir else spec.db
    if not _is_clean(path):
        raise ValueError(f"database path {path!r} is not empty")
    rng = random.Random(spec.seed)
    values = _ValueSource(spec.seed, spec.value_size)
    ks = spec.key_size
    report = BenchReport(spec.benchmark, spec.engine_kind)
    engine = Engine(spec.engine_config(path))

    def phase(name: str, body) -> None:
        engine.wait_idle()
        engine.root.reset_counters()
        t0 = time.perf_counter()
        ops, user, errors = body()
        engine.wait_idle()
        elapsed = time.perf_counter() - t0
        report.phases.append(PhaseResult(name, ops, elapsed, user, engine.counters(), errors))

    def fill(indices):
        def body():
            for i in indices:
                engine.put(make_key(i, ks), values(i))
            return len(indices), len(indices) * (ks + spec.value_size), 0

        return body

    def read(indices, deleted=frozenset()):
        def body():
            errors = 0
            for i in indices:
                got = engine.get(make_key(i, ks))
                want = None if i in deleted else values(i)
                errors += got != want
            return len(indices), 0, errors

        return body

    def scan_all(expected: int):
        def body():
            n = sum(1 for _ in engine.scan(b""))
            return n, 0, abs(n - expected)

        return body

    first = list(range(spec.num))
    shuffled = first[:]
    rng.shuffle(shuffled)
    try:
        b = spec.benchmark
        if b == "fillseq":
            phase("fillseq", fill(first))
        elif b == "fillrandom":
            phase("fillrandom", fill(shuffled))
        elif b == "readseq":
            phase("fillseq", fill(first))
            phase("readseq", scan_all(spec.num))
        elif b == "readrandom":
            phase("fillrandom", fill(shuffled))
            order = first[:]
            rng.shuffle(order)
            phase("readrandom", read(order))
        else:
            phase("write1", fill(shuffled))
            n_del = round(spec.num * spec.delete_pct / 100)
            doomed = rng.sample(first, n_del)

            def delete_body():
                for i in doomed:
                    engine.delete(make_key(i, ks))
                return n_del, n_del * ks, 0

            phase("delete", delete_body)
            if b == "wdw":
                second = list(range(spec.num, 2 * spec.num))
                rng.shuffle(second)
                phase("write2", fill(second))
            else:
                order = first[:]
                rng.shuffle(order)
                phase("read", read(order, frozenset(doomed)))
    finally:
        engine.close()
        if own_dir:
            shutil.rmtree(path, ignore_errors=True)
    return report


def _fmt_amp(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def _rows(report: BenchReport):
    for p in report.phases + [report.overall]:
        c = p.counters
        yield (
            report.benchmark,
            report.engine,
            p.name,
            p.ops,
            f"{p.micros_per_op:.3f}",
            p.user_bytes,
            p.data_bytes_written,
            _fmt_amp(p.write_amp),
            c.files_created,
            c.links_created,
            c.entries_removed,
            c.syncs,
            c.bytes_read,
        )


def emit_report(report: BenchReport, fmt: str = "human") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        if report.phases:
            w.writerows(_rows(report))
        return buf.getvalue()
    if fmt != "human":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"{report.benchmark} on {report.engine} engine"]
    if not report.phases:
        return lines[0] + "\n"
    cols = ("phase", "ops", "micros/op", "user_bytes", "bytes_written", "write_amp",
            "files", "links", "removes", "syncs", "bytes_read")
    rows = [r[2:] for r in _rows(report)]
    widths = [max(len(str(x)) for x in col) for col in zip(cols, *rows)]
    lines.append("  ".join(str(c).rjust(w) for c, w in zip(cols, widths)))
    for r in rows:
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dentrykv-bench",
        description="db_bench-style workloads against the dentry or packed engine.",
    )
    p.add_argument("--engine", choices=("dentry", "packed"), default="dentry")
    p.add_argument("--benchmark", choices=BENCHMARKS, required=True)
    p.add_argument("--num", type=int, default=100_000)
    p.add_argument("--key-size", type=int, default=16)
    p.add_argument("--value-size", type=int, default=100)
    p.add_argument("--delete-pct", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--db", default=None, help="database directory (default: a temporary one)")
    p.add_argument("--sync", choices=("on", "off"), default="on")
    p.add_argument("--l0-limit", type=int, default=DEFAULT_BENCH_L0_LIMIT)
    p.add_argument("--memtable-bytes", type=int, default=None)
    p.add_argument("--value-cache-bytes", type=int, default=None)
    p.add_argument("--handle-cache-entries", type=int, default=None)
    p.add_argument("--inline-compaction", action="store_true",
                   help="run compactions in the writer thread (fully deterministic layout)")
    p.add_argument("--format", choices=("human", "csv"), default="human")
    return p


def spec_from_args(args: argparse.Namespace) -> WorkloadSpec:
    return WorkloadSpec(
        benchmark=args.benchmark,
        num=args.num,
        key_size=args.key_size,
        value_size=args.value_size,
        delete_pct=args.delete_pct,
        seed=args.seed,
        engine_kind=args.engine,
        db=args.db,
        sync=args.sync == "on",
        l0_limit=args.l0_limit,
        memtable_bytes=args.memtable_bytes,
        value_cache_bytes=args.value_cache_bytes,
        handle_cache_entries=args.handle_cache_entries,
        inline_compaction=args.inline_compaction,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = run_workload(spec_from_args(args))
    except (DentryKVError, OSError, ValueError) as e:
        print(f"dentrykv-bench: {e}", file=sys.stderr)
        return 1
    sys.stdout.write(emit_report(report, args.format))
    if report.errors:
        print(f"dentrykv-bench: {report.errors} verification error(s)", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
