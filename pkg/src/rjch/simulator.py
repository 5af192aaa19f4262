"""Experiment harness: static sweeps, churn, bin removal, rehash and bias runs.

Every trial is a pure function of its configuration and a 64-bit trial
seed, so trials can run in any order or in parallel and the aggregated
output is identical.  Trial seeds come from the master seed by a counter:
``seed_i = digest(master, b"trial:%d" % i)`` (low 64 bits).
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Iterable, Sequence

import numpy as np

from rjch.errors import ConfigurationError, InfeasibleConfig, NoAliveBin, RingOverflow, RingSaturated
from rjch.hashing import DEFAULT_BITS, digest
from rjch.metrics import WALL_CLOCK_FIELDS, SweepSummary, TrialMetrics, load_variance, summarize
from rjch.ring import RingTable, Strategy, build_ring, capacity_for, probe_base

PROBE_REPEATS = 100
_M64 = (1 << 64) - 1

CSV_COLUMNS = ("strategy", "n", "k", "epsilon", "virtual", "trials", "metric", "mean", "std")


def trial_seed(master: int, i: int) -> int:
    return digest(master, b"trial:%d" % i).value & _M64


def log_virtual(k: int) -> int:
    """``ceil(log2 k)``, the virtual-copy count used for the log(k) rows."""
    return max(0, math.ceil(math.log2(k))) if k > 1 else 0


@dataclass
class BiasConfig:
    hotspot: int
    bias_p: float

    def __post_init__(self):
        if not 0.0 <= self.bias_p <= 1.0:
            raise ConfigurationError("bias_p must be in [0, 1]")
        if self.hotspot < 0:
            raise ConfigurationError("hotspot must be a non-negative slot")


@dataclass
class StaticConfig:
    n: int = 10000
    k: int = 1000
    epsilons: list[float] = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0])
    virtual: int = 0
    strategies: list[str] = field(default_factory=lambda: ["CH_BL", "RJ_CH"])
    trials: int = 100
    seed: int = 0
    address_bits: int = DEFAULT_BITS
    probe_repeats: int = PROBE_REPEATS
    measure_steps32: bool = True
    bias: BiasConfig | None = None

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ConfigurationError("n and k must be positive")
        if self.trials < 1:
            raise ConfigurationError("need at least one trial")
        if self.virtual < 0:
            raise ConfigurationError("virtual copies must be non-negative")
        if self.probe_repeats < 1:
            raise ConfigurationError("probe_repeats must be positive")
        for s in self.strategies:
            Strategy.parse(s)
        for e in self.epsilons:
            if not e > 0:
                raise ConfigurationError(f"epsilon must be positive, got {e}")
        if self.k * (1 + self.virtual) > (1 << self.address_bits):
            raise RingSaturated("more slots than the address space holds")


@dataclass
class ChurnConfig(StaticConfig):
    # None means n churn events
    churn_events: int | None = None
    churn_model: str = "replace"

    def __post_init__(self):
        super().__post_init__()
        if self.churn_model not in ("replace", "incremental"):
            raise ConfigurationError("churn_model must be 'replace' or 'incremental'")
        if self.churn_events is not None and self.churn_events < 0:
            raise ConfigurationError("churn_events must be non-negative")

    @property
    def events(self) -> int:
        return self.n if self.churn_events is None else self.churn_events

    @property
    def object_to_bin_ratio(self) -> float:
        return self.n / self.k

    @property
    def bin_event_period(self) -> int:
        """Object events between consecutive bin events."""
        return math.ceil(self.n / self.k)


@dataclass
class RemovalMetrics:
    relocated: int
    dropped: int
    mean_bin_searches: float
    mean_slot_steps: float
    objects_conserved: bool
    wall_clock_relocation_ns: float = float("nan")


# ---- single trials -----------------------------------------------------

def _check_feasible(cfg: StaticConfig, strategy: Strategy, epsilon: float) -> None:
    if strategy.bounded and cfg.n > cfg.k * capacity_for(cfg.n, cfg.k, epsilon):
        raise InfeasibleConfig("n exceeds total capacity k*C")


def _fresh_ring(cfg: StaticConfig, strategy: Strategy, epsilon: float, seed: int) -> RingTable:
    _check_feasible(cfg, strategy, epsilon)
    ring = build_ring(cfg.k, epsilon, cfg.n, cfg.virtual, strategy, seed, cfg.address_bits)
    if cfg.bias is not None:
        ring.set_bias(cfg.bias.hotspot, cfg.bias.bias_p)
    return ring


def object_keys(n: int, start: int = 0) -> list[bytes]:
    return [b"obj%d" % i for i in range(start, start + n)]


def _fill(ring: RingTable, n: int) -> int:
    """Insert n objects; returns how many were placed while no bin was full."""
    first_full = ring.insert_many(object_keys(n))
    # first_full counts the object that filled the bin; report those before it
    return n if first_full < 0 else first_full - 1


def measure_next_insert(ring: RingTable, cfg: StaticConfig) -> dict:
    """Average cost of placing one more object, over fresh probe keys, without
    committing any of them."""
    keys = [b"probe:%d" % r for r in range(cfg.probe_repeats)]
    searches: list[int] = []
    steps: list[int] = []
    t0 = time.perf_counter_ns()
    try:
        for key in keys:
            out = ring.probe(key)
            searches.append(out.bin_searches)
            steps.append(out.slot_steps)
    except (RingOverflow, NoAliveBin):
        nan = float("nan")
        return dict(next_insert_bin_searches=nan, next_insert_slot_steps=nan,
                    next_insert_bin_searches_std=nan)
    elapsed = time.perf_counter_ns() - t0
    res = dict(
        next_insert_bin_searches=float(np.mean(searches)),
        next_insert_slot_steps=float(np.mean(steps)),
        next_insert_bin_searches_std=float(np.std(searches)),
        wall_clock_next_insert_ns=elapsed / len(keys),
    )
    if cfg.measure_steps32:
        res["next_insert_steps32"] = _steps32(ring, keys, searches)
    return res


def _steps32(ring: RingTable, keys: Sequence[bytes], searches: Sequence[int]) -> float:
    """Mean slot steps with the ring remapped to a 2**32 address space.

    Walks are replayed on the remapped core.  Random jumps would need about
    2**32/m hashes per bin found, so for RJ_CH we report the conditional
    expectation given the bin searches: each search costs 2**32/m probes on
    average, with m occupied slots.
    """
    if ring.strategy is Strategy.RJ_CH:
        m = int(ring.core.slot_counts().sum())
        return float(np.mean(searches)) * (1 << 32) / m
    core = ring.remapped_core(32)
    s32 = [core.route(int(ring.strategy), probe_base(k), (), ring.first_slot(k))[3] for k in keys]
    return float(np.mean(s32))


def _trial_metrics(ring: RingTable, cfg: StaticConfig, until_full: int) -> TrialMetrics:
    return TrialMetrics(
        load_variance=load_variance(ring.load_vector()),
        full_fraction=ring.full_fraction(),
        objects_until_first_full=until_full,
        **measure_next_insert(ring, cfg),
    )


def run_static_trial(cfg: StaticConfig, strategy, epsilon: float, seed: int) -> TrialMetrics:
    strategy = Strategy.parse(strategy)
    ring = _fresh_ring(cfg, strategy, epsilon, seed)
    until_full = _fill(ring, cfg.n)
    return _trial_metrics(ring, cfg, until_full)


def run_biased_trial(cfg: StaticConfig, bias: BiasConfig, strategy, epsilon: float, seed: int) -> TrialMetrics:
    """Static trial with a ``bias_p`` share of objects' first probe sent to
    the hotspot slot."""
    biased = StaticConfig(**{**asdict(cfg), "bias": None})
    biased.bias = bias
    return run_static_trial(biased, strategy, epsilon, seed)


class _Resident:
    """Resident keys in arrival order, with O(1) uniform sampling and removal."""

    def __init__(self, keys: Iterable[bytes]):
        self.keys = list(keys)
        self.pos = {k: i for i, k in enumerate(self.keys)}
        self.order = dict.fromkeys(self.keys)

    def __len__(self):
        return len(self.keys)

    def add(self, key: bytes) -> None:
        self.pos[key] = len(self.keys)
        self.keys.append(key)
        self.order[key] = None

    def discard(self, key: bytes) -> None:
        i = self.pos.pop(key, None)
        if i is None:
            return
        del self.order[key]
        last = self.keys.pop()
        if i < len(self.keys):
            self.keys[i] = last
            self.pos[last] = i


CHURN_MODELS = ("replace", "incremental")


def _ring_with_bins(template: RingTable, bin_ids: Sequence) -> RingTable:
    """An empty ring like ``template`` (same seed, capacity, bias) holding ``bin_ids``."""
    ring = RingTable(template.strategy, template.capacity, template.virtual_copies, template.seed,
                     template.address_bits, n_expected=template.n_expected, epsilon=template.epsilon)
    ring._bias = template._bias
    ring.core.ensure_bins(len(bin_ids))
    for bid in bin_ids:
        ring.add_bin(bid)
    return ring


def apply_churn(ring: RingTable, cfg: ChurnConfig, rng: np.random.Generator,
                model: str = "replace") -> tuple[RingTable, dict]:
    """Run ``cfg.events`` object events, with one bin event after every
    ``ceil(n/k)`` of them.  Returns the resulting ring and event counters.

    Object events are always incremental: an arrival is placed by the
    strategy, a departure frees one slot of capacity.  Bin events depend on
    ``model``:

    ``replace``
        a change of bin membership re-places every resident object, in
        arrival order, on the new bin set (capacity unchanged).  Objects
        beyond the new total capacity are dropped.
    ``incremental``
        a new bin starts empty; a removed bin's objects are re-inserted
        eagerly.

    Under ``replace`` only the last bin event's re-placement is observable,
    so the ring is rebuilt once, at that event; earlier bin events update
    the membership lists only.
    """
    if model not in CHURN_MODELS:
        raise ConfigurationError(f"churn model must be one of {CHURN_MODELS}")
    resident = _Resident(object_keys(cfg.n))
    bins = [b.id for b in ring.alive_bins]
    next_key = cfg.n
    next_bin = max(cfg.k, len(bins))
    period = cfg.bin_event_period
    last_bin_event = (cfg.events // period) * period
    cap = ring.capacity
    live = model == "incremental" or last_bin_event == 0
    counts = dict(arrivals=0, departures=0, rejected=0, bins_added=0, bins_removed=0, dropped=0)
    for e in range(1, cfg.events + 1):
        if rng.random() < 0.5 or len(resident) == 0:
            key = b"obj%d" % next_key
            next_key += 1
            if live:
                try:
                    ring.insert(key)
                    ok = True
                except (RingOverflow, NoAliveBin):
                    ok = False
            else:
                ok = cap is None or len(resident) < len(bins) * cap
            if ok:
                resident.add(key)
                counts["arrivals"] += 1
            else:
                counts["rejected"] += 1
        else:
            key = resident.keys[int(rng.integers(len(resident)))]
            if live:
                ring.remove_object(key)
            resident.discard(key)
            counts["departures"] += 1
        if e % period:
            continue
        if rng.random() < 0.5 or len(bins) <= 1:
            bid = next_bin
            next_bin += 1
            bins.append(bid)
            counts["bins_added"] += 1
            if model == "incremental":
                ring.add_bin(bid)
        else:
            bid = bins.pop(int(rng.integers(len(bins))))
            counts["bins_removed"] += 1
            if model == "incremental":
                dropped = ring.remove_bin(bid, mode="eager").dropped
            elif cap is not None and len(resident) > len(bins) * cap:
                # the re-placement fills bins in arrival order; the latest
                # arrivals find no room
                dropped = list(resident.order)[len(bins) * cap :]
            else:
                dropped = []
            for key in dropped:
                resident.discard(key)
            counts["dropped"] += len(dropped)
        if model == "replace" and e == last_bin_event:
            ring = _ring_with_bins(ring, bins)
            ring.insert_many(list(resident.order))
            live = True
    return ring, counts


def run_dynamic_trial(cfg: ChurnConfig, strategy, epsilon: float, seed: int) -> TrialMetrics:
    strategy = Strategy.parse(strategy)
    ring = _fresh_ring(cfg, strategy, epsilon, seed)
    until_full = _fill(ring, cfg.n)
    ring, _ = apply_churn(ring, cfg, np.random.default_rng(seed), cfg.churn_model)
    return _trial_metrics(ring, cfg, until_full)


def run_bin_removal_trial(cfg: StaticConfig, strategy, epsilon: float, seed: int) -> RemovalMetrics:
    """Fill, then eagerly remove one uniformly chosen bin and report the
    per-object relocation cost."""
    strategy = Strategy.parse(strategy)
    ring = _fresh_ring(cfg, strategy, epsilon, seed)
    _fill(ring, cfg.n)
    before = len(ring)
    rng = np.random.default_rng(seed)
    victim = ring.alive_bins[int(rng.integers(len(ring.alive_bins)))]
    t0 = time.perf_counter_ns()
    stats = ring.remove_bin(victim.id, mode="eager")
    elapsed = time.perf_counter_ns() - t0
    moved = stats.relocated
    return RemovalMetrics(
        relocated=moved,
        dropped=len(stats.dropped),
        mean_bin_searches=stats.total_bin_searches / moved if moved else 0.0,
        mean_slot_steps=stats.total_slot_steps / moved if moved else 0.0,
        objects_conserved=len(ring) == before - len(stats.dropped),
        wall_clock_relocation_ns=elapsed / moved if moved else 0.0,
    )


# ---- sweeps ------------------------------------------------------------

MODES = ("static", "dynamic", "removal")


def _run_task(task):
    mode, cfg, strategy, epsilon, seed = task
    if mode == "static":
        return run_static_trial(cfg, strategy, epsilon, seed)
    if mode == "dynamic":
        return run_dynamic_trial(cfg, strategy, epsilon, seed)
    if mode == "removal":
        return run_bin_removal_trial(cfg, strategy, epsilon, seed)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class SweepResult:
    mode: str
    summaries: list[SweepSummary]
    # per-trial records, keyed like the summaries
    trials: dict[tuple[str, float], list] = field(default_factory=dict)

    def get(self, strategy, epsilon: float) -> SweepSummary:
        name = Strategy.parse(strategy).name
        for s in self.summaries:
            if s.strategy == name and s.epsilon == epsilon:
                return s
        raise KeyError((name, epsilon))


def run_sweep(cfg: StaticConfig, mode: str = "static", jobs: int = 1) -> SweepResult:
    """Run every (epsilon, strategy, trial) cell.  Trial ``i`` uses the same
    seed for every strategy, so strategies are compared on identical bin
    layouts and keys."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    if mode == "dynamic" and not isinstance(cfg, ChurnConfig):
        cfg = ChurnConfig(**asdict(cfg))
    strategies = [Strategy.parse(s) for s in cfg.strategies]
    for eps in cfg.epsilons:
        for s in strategies:
            _check_feasible(cfg, s, eps)
    seeds = [trial_seed(cfg.seed, i) for i in range(cfg.trials)]
    cells = [(eps, s) for eps in cfg.epsilons for s in strategies]
    tasks = [(mode, cfg, s.name, eps, seed) for eps, s in cells for seed in seeds]
    if jobs > 1 and len(tasks) > 1:
        with Pool(jobs) as pool:
            rows = pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs)))
    else:
        rows = [_run_task(t) for t in tasks]
    result = SweepResult(mode, [])
    for c, (eps, s) in enumerate(cells):
        chunk = rows[c * cfg.trials : (c + 1) * cfg.trials]
        result.trials[(s.name, eps)] = chunk
        result.summaries.append(summarize(chunk, s.name, cfg.n, cfg.k, eps, cfg.virtual))
    return result


def run_rehash_comparison(cfg: StaticConfig, jobs: int = 1) -> SweepResult:
    """Static sweep of CH_BL against its rehash-on-full variant."""
    both = StaticConfig(**{**asdict(cfg), "bias": None, "strategies": ["CH_BL", "CH_BL_REHASH"]})
    both.bias = cfg.bias
    return run_sweep(both, "static", jobs)


# ---- assignment-probability snapshots ------------------------------------

def assign_prob_snapshots(k: int, capacity: int, j_max: int, seed: int, strategy="CH_BL",
                          address_bits: int = DEFAULT_BITS) -> list[list[float]]:
    """Insert objects one at a time and record every open bin's placement
    probability each time the full-bin count reaches a new value, for
    ``j = 0..j_max``."""
    strategy = Strategy.parse(strategy)
    if not 0 <= j_max < k:
        raise ConfigurationError("j_max must lie in [0, k-1]")
    ring = RingTable(strategy, capacity, 0, seed, address_bits)
    ring.core.ensure_bins(k)
    for b in range(k):
        ring.add_bin(b)
    snaps = [list(ring.placement_probabilities().values())]
    full = 0
    i = 0
    while full < j_max:
        out = ring.insert(b"obj%d" % i)
        i += 1
        if ring.bins[out.bin_id].full:
            full += 1
            snaps.append(list(ring.placement_probabilities().values()))
    return snaps


# ---- output --------------------------------------------------------------

def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def summary_rows(summaries: Sequence[SweepSummary], wall_clock: bool = False) -> list[dict]:
    """Flatten summaries into CSV rows.  Wall-clock metrics go in their own
    file (``wall_clock=True``) so the main table is reproducible bit-for-bit."""
    out = []
    for s in summaries:
        for name, m in s.metrics.items():
            timing = name in WALL_CLOCK_FIELDS or name.startswith("wall_clock")
            if timing != wall_clock:
                continue
            out.append(dict(strategy=s.strategy, n=s.n, k=s.k, epsilon=repr(float(s.epsilon)),
                            virtual=s.virtual, trials=m.trials, metric=name,
                            mean=_fmt(m.mean), std=_fmt(m.std)))
    return out


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def rows_to_json(rows: Sequence[dict]) -> str:
    def conv(v):
        if isinstance(v, str) and v != "nan":
            try:
                return float(v) if any(c in v for c in ".e") else v
            except ValueError:
                return v
        return None if v == "nan" else v
    return json.dumps([{k: conv(v) for k, v in r.items()} for r in rows], indent=2, sort_keys=True) + "\n"


def worst_case_searches(n: int, k: int, epsilon: float, inserts: int = 100_000, seed: int = 0,
                        strategy="RJ_CH", address_bits: int = DEFAULT_BITS) -> float:
    """Mean bin searches over ``inserts`` fresh objects on a frozen ring in
    which ``floor(n/C)`` uniformly chosen bins are full and the rest empty."""
    ring = build_ring(k, epsilon, n, 0, strategy, seed, address_bits)
    cap = ring.capacity
    rng = np.random.default_rng(seed)
    for b in rng.choice(k, size=min(k, n // cap), replace=False).tolist():
        ring.core.set_load(int(b), cap)
    core, strat = ring.core, int(ring.strategy)
    total = 0
    for i in range(inserts):
        b, _, searches, _ = core.route(strat, probe_base(b"probe:%d" % i))
        if b < 0:
            raise RingOverflow("frozen ring has no open bin")
        total += searches
    return total / inserts
