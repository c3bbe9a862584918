import random

import pytest
from hypothesis import settings

from dentrykv import Engine, EngineConfig
from dentrykv.storage import open_root

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ENGINE_KINDS = ("dentry", "packed")


def small_config(path, kind="dentry", **kw):
    """A configuration that forces frequent flushes and compactions."""
    base = dict(
        path=str(path),
        engine_kind=kind,
        memtable_bytes=4096,
        l0_limit_files=40,
        sstdir_file_target=16,
        background_compaction=False,
        sync_enabled=False,
        wal_grace_seconds=0,
    )
    base.update(kw)
    return EngineConfig(**base)


@pytest.fixture
def root(tmp_path):
    return open_root(str(tmp_path / "db"), sync_enabled=True)


@pytest.fixture(params=ENGINE_KINDS)
def kind(request):
    return request.param


@pytest.fixture
def make_engine(tmp_path):
    opened = []

    def make(kind="dentry", path=None, **kw):
        e = Engine(small_config(path or tmp_path / "db", kind, **kw))
        opened.append(e)
        return e

    yield make
    for e in opened:
        if not e._closed:
            e.close()


def random_script(seed, n_ops, key_space=300, vmin=16, vmax=1024):
    """A reproducible list of ("put"|"delete"|"get"|"scan", ...) operations."""
    rng = random.Random(seed)
    ops = []
    for _ in range(n_ops):
        r = rng.random()
        key = b"key%06d" % rng.randrange(key_space)
        if r < 0.5:
            ops.append(("put", key, rng.randbytes(rng.randint(vmin, vmax))))
        elif r < 0.65:
            ops.append(("delete", key))
        elif r < 0.95:
            ops.append(("get", key))
        else:
            lo = b"key%06d" % rng.randrange(key_space)
            hi = b"key%06d" % rng.randrange(key_space)
            lo, hi = min(lo, hi), max(lo, hi)
            ops.append(("scan", lo, hi))
    return ops


def run_script(engine, ops, oracle=None):
    """Apply ``ops`` to engine and oracle; returns the list of observed read results."""
    oracle = {} if oracle is None else oracle
    observed = []
    for op in ops:
        if op[0] == "put":
            engine.put(op[1], op[2])
            oracle[op[1]] = op[2]
        elif op[0] == "delete":
            engine.delete(op[1])
            oracle.pop(op[1], None)
        elif op[0] == "get":
            got = engine.get(op[1])
            assert got == oracle.get(op[1]), op
            observed.append(got)
        else:
            got = list(engine.scan(op[1], op[2]))
            want = sorted((k, v) for k, v in oracle.items() if op[1] <= k < op[2])
            assert got == want, op
            observed.append(got)
    return observed
