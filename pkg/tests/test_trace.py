import io
import json
import math

import numpy as np
import pytest

from rjch.errors import ConfigurationError, TraceFormatError
from rjch.trace import (PAPER_CONFIGS, CacheConfig, TraceEvent, compare_strategies, default_address_bits,
                        generate_synthetic_trace, load_trace, parse_trace, run_baseline, run_cache_sim,
                        shaped_config, synthetic_trace_for, trace_to_text, write_trace)

AMPLE = CacheConfig(servers=4, cache_size=100, evict_minutes=10, serve_minutes=1,
                    recovery_minutes=5, failure_threshold=1000)


def ev(*pairs):
    return [TraceEvent(float(t), k) for t, k in pairs]


# ---- parsing ----------------------------------------------------------------

def test_parse_basic():
    out = parse_trace(io.StringIO("0.0,a\n1.5,b\n"))
    assert out == ev((0, "a"), (1.5, "b"))


def test_parse_header_and_blank_lines():
    out = parse_trace(io.StringIO("timestamp_minutes,url\n0,a\n\n2,b\n"))
    assert [e.key for e in out] == ["a", "b"]


def test_parse_empty():
    assert parse_trace(io.StringIO("")) == []


@pytest.mark.parametrize("text,line", [("1.0,a\n0.5,b\n", 2), ("0,a\nx,b\n", 2), ("0,a,b\n", 1),
                                       ("-1,a\n", 1), ("nan,a\n", 1), ("0,a\ninf,b\n", 2)])
def test_parse_errors(text, line):
    with pytest.raises(TraceFormatError) as info:
        parse_trace(io.StringIO(text))
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    times = np.sort(rng.uniform(0, 1e4, 1000))
    keys = [f"http://x/{i},q=\"{i % 7}\"" for i in rng.integers(0, 300, 1000)]
    events = [TraceEvent(float(t), k) for t, k in zip(times, keys)]
    path = tmp_path / "t.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_trace(events, fh)
    back = load_trace(str(path))
    assert back == events
    assert all(a.timestamp.hex() == b.timestamp.hex() for a, b in zip(events, back))
    assert trace_to_text(back) == path.read_text(encoding="utf-8")


# ---- configs ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        CacheConfig(0, 1, 1, 1, 1, 1)
    with pytest.raises(ConfigurationError):
        CacheConfig(2.5, 1, 1, 1, 1, 1)
    with pytest.raises(ConfigurationError):
        CacheConfig.from_dict({"servers": 3})
    d = json.loads(json.dumps(PAPER_CONFIGS["aol-1"].__dict__))
    assert CacheConfig.from_dict(d) == PAPER_CONFIGS["aol-1"]
    with pytest.raises(ConfigurationError):
        CacheConfig.from_dict({**d, "extra": 1})
    with pytest.raises(ConfigurationError):
        CacheConfig.from_json("[1, 2]")
    with pytest.raises(ConfigurationError):
        CacheConfig.from_json("{oops")


def test_presets():
    assert len(PAPER_CONFIGS) == 8
    assert PAPER_CONFIGS["clicks-4"].cache_size == 3000


def test_shaped_config_caps_events():
    for name, cfg in PAPER_CONFIGS.items():
        shaped = shaped_config(cfg)
        assert shaped.servers == cfg.servers and shaped.cache_size == cfg.cache_size
        assert shaped.failure_threshold <= cfg.failure_threshold
        rate = 0.4 * shaped.failure_threshold * shaped.servers / shaped.serve_minutes
        assert rate * 2 * shaped.evict_minutes <= 600_000


def test_default_address_bits():
    assert default_address_bits(20) == 9
    assert default_address_bits(2) == 8
    assert default_address_bits(1000) == 14


# ---- synthetic traces ----------------------------------------------------------

def test_zipf_uniform_when_s_zero():
    tr = generate_synthetic_trace(50_000, 50, 0.0, 100.0, seed=1)
    counts = np.bincount([int(e.key[3:]) for e in tr], minlength=50)
    sigma = math.sqrt(1000 * (1 - 1 / 50))
    assert np.all(np.abs(counts - 1000) < 4 * sigma)


def test_zipf_single_key():
    tr = generate_synthetic_trace(100, 1, 1.2, 10.0, seed=1)
    assert {e.key for e in tr} == {"url0"}


def test_zipf_top_key_frequency():
    n, N = 1_000_000, 1000
    tr = generate_synthetic_trace(n, N, 1.0, 1000.0, seed=2)
    top = sum(e.key == "url0" for e in tr) / n
    h = sum(1 / r for r in range(1, N + 1))
    assert abs(top - 1 / h) < 5 * math.sqrt((1 / h) * (1 - 1 / h) / n)


def test_synthetic_trace_sorted_and_reproducible():
    a = generate_synthetic_trace(1000, 100, 0.8, 50.0, seed=3)
    assert a == generate_synthetic_trace(1000, 100, 0.8, 50.0, seed=3)
    assert all(x.timestamp <= y.timestamp for x, y in zip(a, a[1:]))
    with pytest.raises(ConfigurationError):
        generate_synthetic_trace(10, 20, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        generate_synthetic_trace(10, 5, -1.0, 1.0)


def test_synthetic_trace_for_shape():
    cfg = PAPER_CONFIGS["aol-3"]
    tr = synthetic_trace_for(cfg, seed=0)
    expected = 0.4 * cfg.failure_threshold * cfg.servers / cfg.serve_minutes * 2 * cfg.evict_minutes
    assert len(tr) == round(expected)
    assert tr[-1].timestamp <= 2 * cfg.evict_minutes


# ---- cache simulation ----------------------------------------------------------

@pytest.mark.parametrize("strategy", ["CH", "CH_BL", "RJ_CH"])
def test_hit_after_fill(strategy):
    st = run_cache_sim(AMPLE, ev((0, "a"), (3, "a")), strategy)
    assert st.total_misses == 1 and st.additional_misses == 0


@pytest.mark.parametrize("strategy", ["CH_BL", "RJ_CH"])
def test_eviction_forces_recache(strategy):
    st = run_cache_sim(AMPLE, ev((0, "a"), (11, "a")), strategy)
    assert st.total_misses == 2 and st.baseline_misses == 2


def test_all_unique_misses_everything():
    tr = [TraceEvent(float(i), f"k{i}") for i in range(50)]
    assert run_baseline(AMPLE, tr) == 50
    assert run_cache_sim(AMPLE, tr, "RJ_CH").total_misses == 50


def test_empty_trace():
    st = run_cache_sim(AMPLE, [], "RJ_CH")
    assert st.to_dict() == dict(total_misses=0, baseline_misses=0, failures=0, uncacheable_serves=0,
                                unserved=0, requests=0, additional_misses=0)


def test_overload_fails_server():
    cfg = CacheConfig(servers=1, cache_size=10, evict_minutes=100, serve_minutes=10,
                      recovery_minutes=5, failure_threshold=2)
    tr = ev((0, "a"), (0.1, "a"), (0.2, "a"), (1, "a"), (6, "a"))
    st = run_cache_sim(cfg, tr, "CH_BL")
    # third concurrent request fails the server and wipes it; the fourth
    # arrives while it is down, the fifth after recovery
    assert st.failures == 1
    assert st.unserved == 1
    assert st.total_misses == 3
    assert st.baseline_misses == 1


def test_full_cache_serves_uncached():
    cfg = CacheConfig(servers=1, cache_size=1, evict_minutes=100, serve_minutes=1,
                      recovery_minutes=1, failure_threshold=100)
    st = run_cache_sim(cfg, ev((0, "a"), (1, "b"), (2, "a")), "CH_BL")
    assert st.uncacheable_serves == 1 and st.total_misses == 2


def test_baseline_is_a_lower_bound():
    cfg = CacheConfig(servers=10, cache_size=5, evict_minutes=20, serve_minutes=2,
                      recovery_minutes=3, failure_threshold=8)
    tr = generate_synthetic_trace(5000, 300, 0.9, 200.0, seed=4)
    for name, st in compare_strategies(cfg, tr, ("CH", "CH_BL", "RJ_CH")).items():
        assert st.total_misses >= st.baseline_misses, name
        assert st.requests == len(tr)


def test_sim_deterministic():
    tr = generate_synthetic_trace(3000, 200, 0.9, 100.0, seed=5)
    cfg = CacheConfig(8, 10, 20, 2, 3, 6)
    assert run_cache_sim(cfg, tr, "RJ_CH", seed=1) == run_cache_sim(cfg, tr, "RJ_CH", seed=1)
