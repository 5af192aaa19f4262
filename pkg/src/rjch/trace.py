"""Trace-driven distributed-cache simulation.

Servers are the bins of a ring; each caches up to ``cache_size`` urls.
Requests are routed along the strategy's visitation order, skipping failed
servers.  A key not requested for ``evict_minutes`` is evicted.  Every
request keeps its server busy for ``serve_minutes``; a server with more than
``failure_threshold`` requests in flight fails, loses its cache, and comes
back empty after ``recovery_minutes``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence, TextIO

import numpy as np

from rjch.errors import ConfigurationError, TraceFormatError
from rjch.ring import RingTable, Strategy, probe_base


@dataclass(frozen=True)
class TraceEvent:
    timestamp: float  # minutes
    key: str


@dataclass
class CacheConfig:
    servers: int
    cache_size: int
    evict_minutes: float
    serve_minutes: float
    recovery_minutes: float
    failure_threshold: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigurationError(f"{f.name} must be a positive number, got {v!r}")
        for name in ("servers", "cache_size", "failure_threshold"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ConfigurationError(f"{name} must be an integer")
            setattr(self, name, int(getattr(self, name)))

    @classmethod
    def from_dict(cls, d: dict) -> "CacheConfig":
        names = {f.name for f in fields(cls)}
        missing = names - set(d)
        extra = set(d) - names
        if missing:
            raise ConfigurationError(f"config missing keys: {sorted(missing)}")
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "CacheConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"bad config JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(d)


# Server configurations of the AOL and Clicks experiments
PAPER_CONFIGS = {
    "aol-1": CacheConfig(150, 100, 300, 10, 20, 50),
    "aol-2": CacheConfig(1000, 15, 300, 10, 10, 15),
    "aol-3": CacheConfig(100, 100, 120, 5, 10, 50),
    "aol-4": CacheConfig(20, 300, 120, 3, 10, 500),
    "clicks-1": CacheConfig(500, 500, 30, 5, 10, 2000),
    "clicks-2": CacheConfig(1000, 300, 120, 5, 10, 1000),
    "clicks-3": CacheConfig(800, 300, 15, 5, 7, 1000),
    "clicks-4": CacheConfig(200, 3000, 30, 3, 15, 5000),
}


@dataclass
class CacheStats:
    total_misses: int = 0
    baseline_misses: int = 0
    failures: int = 0
    uncacheable_serves: int = 0
    # requests arriving while every server was down; counted as misses
    unserved: int = 0
    requests: int = 0

    @property
    def additional_misses(self) -> int:
        return self.total_misses - self.baseline_misses

    def to_dict(self) -> dict:
        d = asdict(self)
        d["additional_misses"] = self.additional_misses
        return d


# ---- trace files ---------------------------------------------------------

def _parse_time(text: str, line: int) -> float:
    try:
        t = float(text)
    except ValueError:
        raise TraceFormatError(f"bad timestamp {text!r}", line) from None
    if not math.isfinite(t) or t < 0:
        raise TraceFormatError("timestamp must be finite and non-negative", line)
    return t


def parse_trace(stream: TextIO | Iterable[str]) -> list[TraceEvent]:
    """Read ``timestamp_minutes,url`` CSV rows.  A first row whose timestamp
    does not parse is taken as a header.  Timestamps must not decrease."""
    events: list[TraceEvent] = []
    last = -math.inf
    for line, row in enumerate(csv.reader(stream), start=1):
        if not row:
            continue
        if len(row) != 2:
            raise TraceFormatError(f"expected 2 fields, got {len(row)}", line)
        if line == 1 and not events:
            try:
                float(row[0])
            except ValueError:
                continue
        t = _parse_time(row[0].strip(), line)
        if t < last:
            raise TraceFormatError(f"timestamp {t} precedes {last}", line)
        last = t
        events.append(TraceEvent(t, row[1]))
    return events


def load_trace(path: str) -> list[TraceEvent]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_trace(fh)


def write_trace(events: Iterable[TraceEvent], stream: TextIO, header: bool = True) -> None:
    w = csv.writer(stream, lineterminator="\n")
    if header:
        w.writerow(["timestamp_minutes", "url"])
    for ev in events:
        w.writerow([repr(float(ev.timestamp)), ev.key])


def trace_to_text(events: Iterable[TraceEvent], header: bool = True) -> str:
    buf = io.StringIO()
    write_trace(events, buf, header)
    return buf.getvalue()


def generate_synthetic_trace(num_events: int, num_unique: int, zipf_s: float,
                             duration_minutes: float, seed: int = 0) -> list[TraceEvent]:
    """Keys drawn Zipf(s) over ``num_unique`` urls (rank r has weight r**-s),
    timestamps uniform over the duration and sorted."""
    if num_events < 0:
        raise ConfigurationError("num_events must be non-negative")
    if num_unique < 1 or num_unique > max(num_events, 1):
        raise ConfigurationError("need 1 <= num_unique <= num_events")
    if zipf_s < 0 or not math.isfinite(zipf_s):
        raise ConfigurationError("zipf_s must be a non-negative number")
    if not duration_minutes > 0:
        raise ConfigurationError("duration must be positive")
    rng = np.random.default_rng(seed)
    w = np.arange(1, num_unique + 1, dtype=np.float64) ** -zipf_s
    keys = rng.choice(num_unique, size=num_events, p=w / w.sum())
    times = np.sort(rng.uniform(0.0, duration_minutes, size=num_events))
    return [TraceEvent(float(t), "url%d" % k) for t, k in zip(times.tolist(), keys.tolist())]


def _expected_distinct(num_unique: int, zipf_s: float, draws: float) -> float:
    w = np.arange(1, num_unique + 1, dtype=np.float64) ** -zipf_s
    p = w / w.sum()
    return float(np.sum(-np.expm1(draws * np.log1p(-np.minimum(p, 1 - 1e-15)))))


def _trace_rate(config: CacheConfig, load: float) -> float:
    # requests per minute giving `load` * threshold requests in flight per server
    return load * config.failure_threshold * config.servers / config.serve_minutes


def shaped_config(config: CacheConfig, max_events: int = 600_000, load: float = 0.4,
                  windows: float = 2.0) -> CacheConfig:
    """Lower the failure threshold, and with it the request rate of
    :func:`synthetic_trace_for`, until a trace of ``windows`` eviction windows
    fits in ``max_events`` events.  Servers, cache size and timings are kept."""
    events = _trace_rate(config, load) * windows * config.evict_minutes
    if events <= max_events:
        return config
    thr = max(1, math.floor(config.failure_threshold * max_events / events))
    return CacheConfig(config.servers, config.cache_size, config.evict_minutes,
                       config.serve_minutes, config.recovery_minutes, thr)


def synthetic_trace_for(config: CacheConfig, seed: int = 0, zipf_s: float = 0.6, load: float = 0.4,
                        windows: float = 2.0, occupancy: float = 0.75) -> list[TraceEvent]:
    """A Zipf trace shaped for ``config``.

    Requests arrive fast enough that a server's mean number of requests in
    flight is ``load`` times the failure threshold, for ``windows`` eviction
    windows.  The url population is sized so that the urls requested within
    one eviction window fill about ``occupancy`` of the total cache capacity.
    """
    rate = _trace_rate(config, load)
    duration = windows * config.evict_minutes
    num_events = max(1, round(rate * duration))
    per_window = rate * config.evict_minutes
    target = occupancy * config.servers * config.cache_size
    lo, hi = 1, max(1, num_events)
    while lo < hi:
        mid = (lo + hi) // 2
        if _expected_distinct(mid, zipf_s, per_window) < target:
            lo = mid + 1
        else:
            hi = mid
    return generate_synthetic_trace(num_events, lo, zipf_s, duration, seed)


# ---- simulation ------------------------------------------------------------

def default_address_bits(servers: int) -> int:
    """A ring about 16 times sparser than the server count, at least 8 bits."""
    return min(32, max(8, math.ceil(math.log2(max(servers, 2))) + 4))


def run_cache_sim(config: CacheConfig, trace: Sequence[TraceEvent], strategy, seed: int = 0,
                  address_bits: int | None = None, baseline: int | None = None) -> CacheStats:
    strategy = Strategy.parse(strategy)
    bits = default_address_bits(config.servers) if address_bits is None else address_bits
    cap = config.cache_size if strategy.bounded else None
    ring = RingTable(strategy, cap, 0, seed, bits)
    ring.core.ensure_bins(config.servers)
    for s in range(config.servers):
        ring.add_bin(s)
    core = ring.core
    strat = int(strategy)

    caches: list[dict[str, float]] = [dict() for _ in range(config.servers)]
    holders: dict[str, list[int]] = {}
    active = [0] * config.servers
    epoch = [0] * config.servers
    down = [False] * config.servers
    n_down = 0
    # queues in time order; stale entries are skipped when popped
    touches: deque = deque()    # (last_access, server, key)
    finishing: deque = deque()  # (end, server, epoch)
    reviving: deque = deque()   # (failed_until, server)
    evict, serve, recover = config.evict_minutes, config.serve_minutes, config.recovery_minutes
    threshold = config.failure_threshold
    stats = CacheStats()
    bases: dict[str, bytes] = {}

    def drop(s: int, key: str) -> None:
        del caches[s][key]
        hs = holders[key]
        hs.remove(s)
        if not hs:
            del holders[key]
        core.add_load(s, -1)

    for ev in trace:
        t = ev.timestamp
        stats.requests += 1
        horizon = t - evict
        while touches and touches[0][0] < horizon:
            at, s, key = touches.popleft()
            if caches[s].get(key) == at:
                drop(s, key)
        while finishing and finishing[0][0] <= t:
            _, s, ep = finishing.popleft()
            if epoch[s] == ep:
                active[s] -= 1
        while reviving and reviving[0][0] <= t:
            _, s = reviving.popleft()
            down[s] = False
            n_down -= 1
            core.set_down(s, False)

        key = ev.key
        base = bases.get(key)
        if base is None:
            base = bases[key] = probe_base(key.encode("utf-8"))
        b, found, _, _ = core.route(strat, base, tuple(holders.get(key, ())))
        if b < 0:
            # fetched from origin without caching: still a miss
            stats.total_misses += 1
            if n_down == config.servers:
                stats.unserved += 1
            else:
                stats.uncacheable_serves += 1
            continue
        if not found:
            stats.total_misses += 1
            core.add_load(b, 1)
            holders.setdefault(key, []).append(b)
        caches[b][key] = t
        touches.append((t, b, key))
        active[b] += 1
        finishing.append((t + serve, b, epoch[b]))
        if active[b] > threshold:
            for k in list(caches[b]):
                drop(b, k)
            active[b] = 0
            epoch[b] += 1
            down[b] = True
            n_down += 1
            core.set_down(b, True)
            reviving.append((t + recover, b))
            stats.failures += 1

    stats.baseline_misses = run_baseline(config, trace) if baseline is None else baseline
    return stats


def run_baseline(config: CacheConfig, trace: Iterable[TraceEvent]) -> int:
    """Misses of one infinite cache with the same eviction clock and no failures."""
    last: dict[str, float] = {}
    misses = 0
    evict = config.evict_minutes
    for ev in trace:
        prev = last.get(ev.key)
        if prev is None or prev < ev.timestamp - evict:
            misses += 1
        last[ev.key] = ev.timestamp
    return misses


def compare_strategies(config: CacheConfig, trace: Sequence[TraceEvent], strategies=("CH_BL", "RJ_CH"),
                       seed: int = 0, address_bits: int | None = None) -> dict[str, CacheStats]:
    """Run every strategy on the same trace and ring seed."""
    base = run_baseline(config, trace)
    return {Strategy.parse(s).name: run_cache_sim(config, trace, s, seed, address_bits, base) for s in strategies}
