import itertools
import os
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dentrykv.codec import DELETE, PUT, KvRecord
from dentrykv.compaction import (
    Header,
    major_compact_dentry,
    merge_sorted_inputs,
    resolve_winner,
    retained,
    should_drop_tombstone,
)
from dentrykv.sstdir import dir_rel, read_kv_file, sstdir_scan, sstdir_write
from dentrykv.version import CompactionJob, ManifestEdit, SstDirHandle, Version, recover


def R(seq, op=PUT, v=b""):
    return KvRecord(seq, op, v if op == PUT else b"")


# -- pure rules ------------------------------------------------------------


def test_retained_without_floor_keeps_newest():
    assert retained([R(1), R(5), R(3)], None) == [R(5)]
    assert retained([], None) == []


def test_retained_with_floor():
    recs = [R(1), R(3), R(5), R(8)]
    assert retained(recs, 4) == [R(3), R(5), R(8)]
    assert retained(recs, 1) == recs
    assert retained(recs, 100) == [R(8)]


@given(st.lists(st.integers(1, 1000), unique=True, min_size=1, max_size=12), st.one_of(st.none(), st.integers(0, 1001)))
def test_retained_oracle(seqs, floor):
    recs = [R(s) for s in seqs]
    got = [r.seq for r in retained(recs, floor)]
    ordered = sorted(seqs)
    if floor is None:
        assert got == [ordered[-1]]
    else:
        above = [s for s in ordered if s >= floor]
        below = [s for s in ordered if s < floor]
        assert got == below[-1:] + above
    # every snapshot >= floor still sees the same newest-visible record
    if floor is not None:
        for snap in range(floor, 1002, 97):
            vis = [s for s in ordered if s <= snap]
            vis2 = [s for s in got if s <= snap]
            assert vis[-1:] == vis2[-1:]


def test_resolve_winner():
    l0 = [Header(9, PUT, 1, 0, 0)]
    l1 = [Header(4, PUT, 1, 1, 0)]
    assert resolve_winner([l0, l1]) == 0
    assert resolve_winner([l1, l0]) == 1
    assert resolve_winner([[(3, DELETE)], [(2, PUT)]]) == 0
    with pytest.raises(ValueError):
        resolve_winner([])


@given(st.lists(st.lists(st.integers(1, 10**6), min_size=1, max_size=4), min_size=1, max_size=5, unique_by=lambda l: max(l)))
def test_resolve_winner_vs_max_seq(contenders):
    top = max(max(c) for c in contenders)
    i = resolve_winner([[(s,) for s in c] for c in contenders])
    assert max(contenders[i]) == top


def _version(spec):
    added = [SstDirHandle(l, n, lo, hi, 1) for n, (l, lo, hi) in enumerate(spec, 1)]
    return Version.empty().apply(ManifestEdit(added=added))


def test_should_drop_tombstone_examples():
    v = _version([(3, b"a", b"m")])
    assert should_drop_tombstone(b"c", v.max_level, v)
    assert not should_drop_tombstone(b"c", 1, v)
    assert should_drop_tombstone(b"z", 1, v)
    assert should_drop_tombstone(b"c", 3, v)


@given(st.lists(st.tuples(st.integers(1, 6), st.binary(max_size=2)), max_size=10), st.binary(max_size=2),
       st.integers(1, 6))
def test_should_drop_tombstone_vs_bruteforce(points, key, out_level):
    spec = []
    for lvl, p in points:
        if not any(l == lvl and lo <= p <= hi for l, lo, hi in spec):
            spec.append((lvl, p, p + b"\x40"))
    spec = [s for s in spec if not any(o is not s and o[0] == s[0] and not (o[2] < s[1] or o[1] > s[2]) for o in spec)]
    v = _version(spec)
    brute = out_level == v.max_level or not any(l > out_level and lo <= key <= hi for l, lo, hi in spec)
    assert should_drop_tombstone(key, out_level, v) == brute


def test_merge_sorted_inputs_tags_sources():
    a = [(b"a", "a0"), (b"c", "a1")]
    b = [(b"b", "b0"), (b"c", "b1")]
    assert list(merge_sorted_inputs([a, b])) == [
        (b"a", [(0, "a0")]),
        (b"b", [(1, "b0")]),
        (b"c", [(0, "a1"), (1, "b1")]),
    ]


# -- directory-level merges --------------------------------------------------


class Env:
    def __init__(self, root):
        self.root = root
        self.vs = recover(root).versions

    def add(self, level, entries):
        no = self.vs.new_file_number()
        meta = sstdir_write(self.root, level, no, entries)
        h = SstDirHandle(level, no, meta.smallest_key, meta.largest_key, meta.entry_count)
        self.vs.log_and_apply(ManifestEdit(added=[h]))
        return h

    def alloc_from(self, start):
        it = itertools.count(start)
        return lambda: next(it)


def _ino(root, rel):
    return os.stat(root._abs(rel)).st_ino


def test_two_inputs_into_two_outputs_keep_inodes(root):
    env = Env(root)
    env.vs.next_file_number = 2
    l0 = env.add(0, [(b"%02d" % k, [R(10 + k, PUT, b"new%d" % k)]) for k in (1, 4, 6, 9)])
    env.vs.next_file_number = 7
    l1 = env.add(1, [(b"%02d" % k, [R(k, PUT, b"old%d" % k)]) for k in (2, 3, 5, 7, 8)])
    assert (l0.dir_no, l1.dir_no) == (2, 7)
    src_inodes = {}
    for h in (l0, l1):
        for key, _ in sstdir_scan(root, h.level, h.dir_no):
            src_inodes[key] = _ino(root, f"{dir_rel(h.level, h.dir_no)}/{key.decode()}")
    job = CompactionJob(0, [l0], [l1])
    before = root.counters_snapshot()
    outs = major_compact_dentry(root, job, env.vs.current, env.alloc_from(12), 5, 10, 7)
    delta = root.counters_snapshot() - before
    assert [(h.level, h.dir_no) for h in outs] == [(1, 12), (1, 13)]
    assert delta.bytes_by_kind["kv"] == 0 and delta.links_created == 9
    for h in outs:
        for key, recs in sstdir_scan(root, 1, h.dir_no):
            assert _ino(root, f"L1/{h.dir_no:06d}/{key.decode()}") == src_inodes[key]


def test_overwrite_across_inputs_links_winner(root):
    env = Env(root)
    l1 = env.add(1, [(b"k", [R(4, PUT, b"old")])])
    l0 = env.add(0, [(b"k", [R(9, PUT, b"new")])])
    outs = major_compact_dentry(root, CompactionJob(0, [l0], [l1]), env.vs.current, env.alloc_from(50), 100, 10, 7)
    assert read_kv_file(root, f"L1/{outs[0].dir_no:06d}/k") == [R(9, PUT, b"new")]
    assert _ino(root, f"L1/{outs[0].dir_no:06d}/k") == _ino(root, f"L0/{l0.dir_no:06d}/k")


def test_tombstone_dropped_at_bottom_kept_above(root):
    env = Env(root)
    deep = env.add(4, [(b"x", [R(1, PUT, b"ancient")])])
    l1 = env.add(1, [(b"k", [R(4, PUT, b"old")]), (b"x", [R(2, PUT, b"mid")])])
    l0 = env.add(0, [(b"k", [R(9, DELETE)]), (b"x", [R(10, DELETE)])])
    outs = major_compact_dentry(root, CompactionJob(0, [l0], [l1]), env.vs.current, env.alloc_from(60), 100, 10, 7)
    got = dict(sstdir_scan(root, 1, outs[0].dir_no))
    assert b"k" not in got  # nothing deeper: tombstone and its victim vanish
    assert got[b"x"] == [R(10, DELETE)]  # deeper L4 still holds x
    del deep


def test_snapshot_floor_forces_rewrite(root):
    env = Env(root)
    l1 = env.add(1, [(b"k", [R(4, PUT, b"old")])])
    l0 = env.add(0, [(b"k", [R(9, PUT, b"new")])])
    before = root.counters_snapshot()
    job = CompactionJob(0, [l0], [l1], snapshot_floor=5)
    outs = major_compact_dentry(root, job, env.vs.current, env.alloc_from(70), 100, 10, 7)
    assert read_kv_file(root, f"L1/{outs[0].dir_no:06d}/k") == [R(4, PUT, b"old"), R(9, PUT, b"new")]
    assert (root.counters_snapshot() - before).bytes_by_kind["kv"] > 0


def test_pruning_old_variants_rewrites(root):
    env = Env(root)
    l0 = env.add(0, [(b"k", [R(1, PUT, b"a"), R(2, PUT, b"b"), R(3, PUT, b"c")])])
    outs = major_compact_dentry(root, CompactionJob(0, [l0], []), env.vs.current, env.alloc_from(80), 100, 10, 7)
    assert read_kv_file(root, f"L1/{outs[0].dir_no:06d}/k") == [R(3, PUT, b"c")]


def test_random_merge_matches_map_oracle(root):
    rng = random.Random(12)
    env = Env(root)
    seq = itertools.count(1)
    oracle = {}
    lower_entries = {}
    for _ in range(200):
        k = b"k%03d" % rng.randrange(400)
        lower_entries[k] = [R(next(seq), PUT, rng.randbytes(8))]
    l1 = env.add(1, sorted(lower_entries.items()))
    oracle.update({k: r[0] for k, r in lower_entries.items()})
    uppers = []
    for _ in range(3):
        ent = {}
        for _ in range(80):
            k = b"k%03d" % rng.randrange(400)
            ent[k] = [R(next(seq), rng.choice([PUT, PUT, DELETE]), rng.randbytes(8))]
        uppers.append(env.add(0, sorted(ent.items())))
        oracle.update({k: r[0] for k, r in ent.items()})
    job = CompactionJob(0, list(env.vs.current.levels[0]), [l1])
    outs = major_compact_dentry(root, job, env.vs.current, env.alloc_from(500), 37, 10, 7)
    got = {}
    for h in outs:
        for key, recs in sstdir_scan(root, 1, h.dir_no):
            assert len(recs) == 1
            got[key] = recs[0]
    want = {k: r for k, r in oracle.items() if r.op == PUT}
    assert got == want
    assert all(h.entry_count <= 37 for h in outs)
    for a, b in zip(outs, outs[1:]):
        assert a.largest < b.smallest
