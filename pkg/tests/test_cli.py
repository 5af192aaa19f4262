import json
import subprocess
import sys

import pytest

from rjch.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_TRACE, EXIT_USAGE, main

SMALL = ["--objects", "600", "--bins", "60", "--trials", "2", "--probes", "5", "--no-steps32"]


def _run(args):
    return main([str(a) for a in args])


def test_sweep_writes_outputs(tmp_path):
    out = tmp_path / "s"
    assert _run(["sweep", *SMALL, "--epsilons", "0.3,1", "--jobs", "1", "--out", out]) == EXIT_OK
    for name in ("sweep.csv", "sweep.json", "timing.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    report = json.loads((out / "sweep.json").read_text())
    assert report["manifest_hash"] == manifest["manifest_hash"]
    assert manifest["params"]["epsilons"] == [0.3, 1.0]
    header = (out / "sweep.csv").read_text().splitlines()[0]
    assert header == "strategy,n,k,epsilon,virtual,trials,metric,mean,std"


def test_single_row_per_metric(tmp_path):
    out = tmp_path / "one"
    assert _run(["sweep", *SMALL, "--trials", "1", "--epsilons", "1", "--strategies", "RJ_CH",
                 "--jobs", "1", "--out", out]) == EXIT_OK
    rows = (out / "sweep.csv").read_text().splitlines()[1:]
    metrics = [r.split(",")[6] for r in rows]
    assert len(metrics) == len(set(metrics))


def test_sweep_jobs_and_reruns_identical(tmp_path):
    args = ["sweep", *SMALL, "--epsilons", "0.1,3", "--strategies", "CH_BL,RJ_CH,CH_BL_REHASH"]
    assert _run([*args, "--jobs", "1", "--out", tmp_path / "a"]) == EXIT_OK
    assert _run([*args, "--jobs", "3", "--out", tmp_path / "b"]) == EXIT_OK
    assert _run([*args, "--jobs", "1", "--out", tmp_path / "c"]) == EXIT_OK
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes() == (tmp_path / "c" / "sweep.csv").read_bytes()
    ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["manifest_hash"]
    hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["manifest_hash"]
    assert ha == hb


@pytest.mark.parametrize("extra", [["--dynamic"], ["--remove-bin"], ["--bias", "0.5:100"],
                                   ["--virtual", "logk"], ["--dynamic", "--churn-model", "incremental"]])
def test_sweep_modes(tmp_path, extra):
    assert _run(["sweep", *SMALL, "--epsilons", "0.3", "--jobs", "1", *extra, "--out", tmp_path]) == EXIT_OK


@pytest.mark.parametrize("bad", [["--epsilons", "0"], ["--epsilons", "-1"], ["--virtual", "lots"],
                                 ["--trials", "0"], ["--jobs", "0"], ["--strategies", "NOPE"]])
def test_sweep_usage_errors(tmp_path, bad):
    assert _run(["sweep", *SMALL, *bad, "--out", tmp_path]) == EXIT_USAGE


def test_sweep_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        _run(["sweep", "--epsilons", "a,b", "--out", tmp_path])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        _run(["sweep", "--bias", "oops", "--out", tmp_path])
    assert info.value.code == 2


def test_sweep_infeasible(tmp_path):
    assert _run(["sweep", "--objects", "100", "--bins", "300", "--address-bits", "8", "--trials", "1",
                 "--out", tmp_path]) == EXIT_INFEASIBLE


def _cfg(tmp_path, **over):
    d = dict(servers=10, cache_size=20, evict_minutes=30, serve_minutes=2, recovery_minutes=5,
             failure_threshold=10)
    d.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def test_trace_synthetic(tmp_path):
    cfg = _cfg(tmp_path)
    out = tmp_path / "t"
    assert _run(["trace", "--config", cfg, "--synthetic", "events=3000,unique=400,zipf=0.8,duration=60",
                 "--out", out]) == EXIT_OK
    report = json.loads((out / "trace.json").read_text())
    assert set(report["results"]) == {"CH_BL", "RJ_CH"}
    assert "comparison" in report and report["events"] == 3000


def test_trace_preset_auto(tmp_path):
    assert _run(["trace", "--preset", "aol-3", "--synthetic", "auto", "--out", tmp_path]) == EXIT_OK
    cmp = json.loads((tmp_path / "trace.json").read_text())["comparison"]
    assert cmp["rj_fewer_additional_misses"] and cmp["rj_no_more_failures"]


def test_trace_input_file(tmp_path):
    tr = tmp_path / "in.csv"
    tr.write_text("timestamp_minutes,url\n0,a\n1,b\n2,a\n")
    assert _run(["trace", "--config", _cfg(tmp_path), "--input", tr, "--out", tmp_path / "o"]) == EXIT_OK
    r = json.loads((tmp_path / "o" / "trace.json").read_text())["results"]["RJ_CH"]
    assert r["total_misses"] == 2 and r["requests"] == 3


def test_trace_empty_input(tmp_path):
    tr = tmp_path / "empty.csv"
    tr.write_text("")
    assert _run(["trace", "--preset", "aol-1", "--input", tr, "--out", tmp_path / "o"]) == EXIT_OK
    r = json.loads((tmp_path / "o" / "trace.json").read_text())["results"]
    assert all(v == 0 for s in r.values() for v in s.values())


def test_trace_errors(tmp_path):
    assert _run(["trace", "--preset", "aol-1", "--input", tmp_path / "missing.csv", "--out", tmp_path]) == EXIT_TRACE
    bad = tmp_path / "bad.csv"
    bad.write_text("1,a\n0,b\n")
    assert _run(["trace", "--preset", "aol-1", "--input", bad, "--out", tmp_path]) == EXIT_TRACE
    ok = tmp_path / "ok.csv"
    ok.write_text("0,a\n")
    assert _run(["trace", "--config", _cfg(tmp_path, servers=0), "--input", ok, "--out", tmp_path]) == EXIT_USAGE
    assert _run(["trace", "--preset", "nope", "--input", ok, "--out", tmp_path]) == EXIT_USAGE
    assert _run(["trace", "--preset", "aol-1", "--synthetic", "events=5", "--out", tmp_path]) == EXIT_USAGE


def test_verify_suites(tmp_path, capsys):
    assert _run(["verify", "--suite", "dominance", "--max-k", "4", "--max-n", "8"]) == EXIT_OK
    assert _run(["verify", "--suite", "all", "--max-k", "1", "--inserts", "0", "--out", tmp_path]) == EXIT_OK
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"] and report["failed"] == 0
    table = report["bounds_table"]
    assert [r["epsilon"] for r in table] == [0.1, 0.3, 0.5, 1.0, 3.0]
    for r in table[:3]:
        assert r["rjch_bound"] < r["chbl_bound"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rjch", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "rjch" in res.stdout
