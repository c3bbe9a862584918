import csv
import io
import os
import subprocess
import sys

import pytest

from dentrykv.bench import CSV_HEADER, BenchReport, PhaseResult, WorkloadSpec, emit_report, main, make_key, run_workload
from dentrykv.storage import IoCounters


def _tree(path):
    out = {}
    for dirpath, _, files in os.walk(path):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, path)] = fh.read()
    return out


def test_make_key():
    assert make_key(42, 16) == b"0000000000000042"


def test_fillseq_deterministic(tmp_path):
    reports, trees = [], []
    for i in range(2):
        db = tmp_path / f"db{i}"
        spec = WorkloadSpec("fillseq", num=1000, value_size=64, seed=1, db=str(db), sync=False,
                            inline_compaction=True, memtable_bytes=16 << 10, l0_limit=200)
        r = run_workload(spec)
        reports.append([(p.name, p.ops, p.user_bytes, p.counters) for p in r.phases])
        trees.append(_tree(db))
    assert reports[0] == reports[1]
    assert trees[0] == trees[1]


def test_wdr_verifies_every_key(tmp_path):
    spec = WorkloadSpec("wdr", num=2000, value_size=40, delete_pct=30, sync=False, memtable_bytes=16 << 10,
                        l0_limit=200)
    r = run_workload(spec)
    assert [p.name for p in r.phases] == ["write1", "delete", "read"]
    assert r.errors == 0
    assert r.phase("delete").ops == 600
    assert r.phase("delete").user_bytes == 600 * 16


@pytest.mark.parametrize("bench", ["fillrandom", "readseq", "readrandom", "wdw"])
def test_benchmarks_run(bench, kind):
    r = run_workload(WorkloadSpec(bench, num=1500, value_size=32, engine_kind=kind, sync=False,
                                  memtable_bytes=8 << 10, l0_limit=100))
    assert r.errors == 0 and r.phases
    for p in r.phases:
        if p.user_bytes:
            assert p.data_bytes_written >= p.user_bytes


def test_wal_lower_bound():
    n = 500
    r = run_workload(WorkloadSpec("fillseq", num=n, value_size=512, sync=False))
    assert r.phases[0].data_bytes_written >= n * 528


def test_dirty_db_rejected(tmp_path):
    (tmp_path / "junk").write_text("x")
    with pytest.raises(ValueError):
        run_workload(WorkloadSpec("fillseq", num=10, db=str(tmp_path)))


def test_empty_report_csv():
    out = emit_report(BenchReport("fillseq", "dentry"), "csv")
    assert out == ",".join(CSV_HEADER) + "\n"


def test_known_counters_exact_csv_line():
    c = IoCounters(data_bytes_written=300, files_created=3, links_created=4, entries_removed=5, syncs=6,
                   bytes_read=7)
    rep = BenchReport("wdw", "dentry", [PhaseResult("write1", 10, 0.001, 150, c)])
    lines = emit_report(rep, "csv").splitlines()
    assert lines[1] == "wdw,dentry,write1,10,100.000,150,300,2.0000,3,4,5,6,7"
    assert lines[2] == "wdw,dentry,overall,10,100.000,150,300,2.0000,3,4,5,6,7"


def test_human_and_csv_agree():
    r = run_workload(WorkloadSpec("wdw", num=800, value_size=32, sync=False, memtable_bytes=8 << 10, l0_limit=100))
    rows = list(csv.DictReader(io.StringIO(emit_report(r, "csv"))))
    human = emit_report(r, "human").splitlines()[2:]
    assert len(rows) == len(human)
    for row, line in zip(rows, human):
        cells = line.split()
        assert cells[0] == row["phase"]
        assert [int(cells[1]), cells[2], int(cells[3]), int(cells[4]), cells[5]] == [
            int(row["ops"]), row["micros_per_op"], int(row["user_bytes"]), int(row["data_bytes_written"]),
            row["write_amp"],
        ]
        assert list(map(int, cells[6:])) == [int(row[k]) for k in CSV_HEADER[8:]]


def test_cli_main_csv(capsys):
    rc = main(["--benchmark", "fillrandom", "--num", "300", "--value-size", "20", "--sync", "off", "--format", "csv"])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == ",".join(CSV_HEADER)
    assert out[1].startswith("fillrandom,dentry,fillrandom,300,")


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    (tmp_path / "junk").write_text("x")
    assert main(["--benchmark", "fillseq", "--num", "10", "--db", str(tmp_path)]) == 1
    assert main(["--benchmark", "fillseq", "--num", "10", "--key-size", "4"]) == 1
    with pytest.raises(SystemExit):
        main(["--benchmark", "nope"])


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "dentrykv.bench", "--benchmark", "fillseq", "--num", "50",
                          "--sync", "off"], capture_output=True, text=True, check=True)
    assert "fillseq on dentry engine" in out.stdout
