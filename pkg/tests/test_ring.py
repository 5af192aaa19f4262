import bisect
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from rjch.errors import ConfigurationError, NoAliveBin, RingOverflow, RingSaturated
from rjch.hashing import ProbeKey, probe_slots
from rjch.ring import RingTable, Strategy, build_ring, capacity_for, probe_base

STRATEGIES = ["CH", "CH_BL", "CH_BL_REHASH", "RJ_CH"]
BOUNDED = ["CH_BL", "CH_BL_REHASH", "RJ_CH"]


# ---- independent reference routers -----------------------------------------

def _owner_map(ring):
    pos, own = ring.core.slot_table()
    return [int(p) for p in pos], [int(o) for o in own]


def _ref_walk(ring, key):
    pos, own = _owner_map(ring)
    start = probe_slots(ProbeKey(probe_base(key), 0), ring.address_bits, ring.seed)[0]
    i = bisect.bisect_left(pos, start)
    searches = 0
    for step in range(len(pos)):
        b = own[(i + step) % len(pos)]
        searches += 1
        if ring.bin_at(b).load < ring.capacity:
            return b, searches
    return -1, searches


def _ref_jump(ring, key):
    pos, own = _owner_map(ring)
    owner = dict(zip(pos, own))
    searches = 0
    for attempt in range(100_000):
        for s in probe_slots(ProbeKey(probe_base(key), attempt), ring.address_bits, ring.seed):
            b = owner.get(s)
            if b is None:
                continue
            searches += 1
            if ring.bin_at(b).load < ring.capacity:
                return b, searches
    raise AssertionError("reference router gave up")


@pytest.mark.parametrize("strategy,ref", [("CH_BL", _ref_walk), ("RJ_CH", _ref_jump)])
def test_routing_matches_reference(strategy, ref):
    ring = build_ring(40, 0.1, 400, 0, strategy, seed=3, address_bits=12)
    for i in range(430):
        key = b"obj%d" % i
        if ring.full_count() == 40:
            break
        want_bin, want_searches = ref(ring, key)
        out = ring.insert(key)
        assert ring.bins[out.bin_id].index == want_bin
        assert out.bin_searches == want_searches


# ---- construction ------------------------------------------------------------

def test_capacity_examples():
    assert capacity_for(10000, 1000, 0.1) == 11
    assert capacity_for(10000, 1000, 0.3) == 13
    assert capacity_for(5, 1, 0.0) == 5
    ring = build_ring(1000, 0.1, 10000, 0, "CH_BL")
    assert all(b.capacity == 11 for b in ring.bins.values())
    single = build_ring(1, 0.0, 5, 0, "RJ_CH")
    assert len(single.bins) == 1 and single.capacity == 5


def test_virtual_slots_distinct():
    ring = build_ring(1000, 0.1, 10000, 10, "CH_BL", seed=1)
    slots = [s for b in ring.bins.values() for s in b.slots]
    assert len(slots) == 1000 * 11 == len(set(slots))
    pos, _ = ring.core.slot_table()
    assert len(pos) == len(slots)


def test_saturated_ring_rejected():
    with pytest.raises(RingSaturated):
        build_ring(20, 0.1, 100, 0, "CH_BL", address_bits=4)


def test_bad_parameters():
    with pytest.raises(ConfigurationError):
        RingTable("CH_BL", 0)
    with pytest.raises(ConfigurationError):
        RingTable("CH_BL", 3, virtual_copies=-1)
    with pytest.raises(ConfigurationError):
        build_ring(10, -0.1, 100)
    with pytest.raises(ConfigurationError):
        Strategy.parse("NOPE")


def test_duplicate_bin_id():
    ring = build_ring(3, 0.1, 10, 0, "RJ_CH")
    with pytest.raises(ConfigurationError):
        ring.add_bin(1)


# ---- insertion ---------------------------------------------------------------

@pytest.mark.parametrize("strategy", BOUNDED)
def test_single_bin_overflow(strategy):
    ring = RingTable(strategy, 3)
    ring.add_bin("only")
    for i in range(3):
        assert ring.insert(b"k%d" % i).bin_id == "only"
    with pytest.raises(RingOverflow):
        ring.insert(b"k3")


@pytest.mark.parametrize("strategy", BOUNDED)
def test_overflow_iff_total_capacity(strategy):
    ring = build_ring(20, 0.0, 60, 1, strategy, seed=2, address_bits=12)
    total = 20 * ring.capacity
    for i in range(total):
        ring.insert(b"o%d" % i)
    assert ring.full_fraction() == 1.0 and len(ring) == total
    with pytest.raises(RingOverflow):
        ring.insert(b"extra")


def test_no_alive_bin():
    ring = RingTable("RJ_CH", 2)
    with pytest.raises(NoAliveBin):
        ring.insert(b"x")


def test_unbounded_ch_ignores_capacity():
    ring = build_ring(5, 0.1, 10, 0, "CH", seed=1)
    for i in range(100):
        ring.insert(b"o%d" % i)
    assert sum(ring.load_vector()) == 100


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_search_and_step_counts(strategy):
    ring = build_ring(50, 0.1, 500, 0, strategy, seed=4, address_bits=16)
    for i in range(500):
        out = ring.insert(b"o%d" % i)
        assert out.bin_searches >= 1 and out.slot_steps >= 1
        if strategy in ("CH", "CH_BL"):
            assert out.slot_steps >= out.bin_searches


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_insert_many_equals_insert(strategy):
    a = build_ring(30, 0.2, 300, 2, strategy, seed=5, address_bits=14)
    b = build_ring(30, 0.2, 300, 2, strategy, seed=5, address_bits=14)
    keys = [b"o%d" % i for i in range(300)]
    first_full = a.insert_many(keys)
    seen = -1
    for i, k in enumerate(keys):
        b.insert(k)
        if seen < 0 and b.full_count() > 0 and strategy != "CH":
            seen = i + 1
    assert a.load_vector() == b.load_vector()
    if strategy != "CH":
        assert first_full == seen


def test_probe_does_not_commit():
    ring = build_ring(10, 0.1, 100, 0, "RJ_CH", seed=1)
    out = ring.probe(b"p")
    assert len(ring) == 0 and b"p" not in ring
    assert ring.insert(b"p").bin_id == out.bin_id


# ---- lookup and removal ---------------------------------------------------------

@pytest.mark.parametrize("strategy", STRATEGIES)
def test_read_your_write(strategy):
    ring = build_ring(30, 0.1, 300, 0, strategy, seed=6, address_bits=14)
    placed = {}
    for i in range(300):
        placed[b"o%d" % i] = ring.insert(b"o%d" % i).bin_id
    for k, bid in placed.items():
        assert ring.lookup(k) == bid
    assert ring.lookup(b"never-inserted") is None
    with pytest.raises(ValueError):
        ring.insert(b"o0")


@pytest.mark.parametrize("strategy", BOUNDED)
def test_remove_object(strategy):
    ring = build_ring(10, 0.1, 100, 0, strategy, seed=7)
    bid = ring.insert(b"a").bin_id
    before = ring.bins[bid].load
    assert ring.remove_object(b"a") is True
    assert ring.bins[bid].load == before - 1
    snapshot = ring.load_vector()
    assert ring.remove_object(b"a") is False
    assert ring.load_vector() == snapshot


def test_freed_slot_reused():
    ring = RingTable("CH_BL", 2, seed=0, address_bits=8)
    ring.add_bin("a")
    ring.add_bin("b")
    keys = [b"k%d" % i for i in range(4)]
    for k in keys:
        ring.insert(k)
    assert ring.full_fraction() == 1.0
    victim = keys[0]
    home = ring.lookup(victim)
    ring.remove_object(victim)
    assert ring.insert(b"fresh").bin_id == home


@pytest.mark.parametrize("strategy", BOUNDED)
def test_eager_removal_conserves(strategy):
    ring = build_ring(50, 1.0, 250, 0, strategy, seed=8, address_bits=16)
    for i in range(250):
        ring.insert(b"o%d" % i)
    victim = max(ring.bins.values(), key=lambda b: b.load)
    load = victim.load
    stats = ring.remove_bin(victim.id, "eager")
    assert stats.relocated == load and not stats.dropped
    assert len(ring) == 250 and len(ring.alive_bins) == 49


def test_lazy_removal_drops_and_reinserts():
    ring = build_ring(20, 0.5, 100, 0, "RJ_CH", seed=9, address_bits=14)
    for i in range(100):
        ring.insert(b"o%d" % i)
    victim = max(ring.bins.values(), key=lambda b: b.load)
    keys = list(victim.keys)
    stats = ring.remove_bin(victim.id, "lazy")
    assert len(ring) == 100 - len(keys) and sorted(stats.dropped) == sorted(keys)
    for k in keys:
        assert ring.lookup(k) is None
        assert ring.insert(k).bin_id != victim.id
    assert len(ring) == 100


def test_empty_bin_removal_costs_nothing():
    ring = build_ring(10, 0.5, 50, 0, "CH_BL", seed=1)
    stats = ring.remove_bin(3, "eager")
    assert stats.relocated == 0 and stats.total_bin_searches == 0


def test_added_bin_receives_objects():
    ring = build_ring(10, 1.0, 100, 0, "RJ_CH", seed=10)
    ring.add_bin("new")
    for i in range(100):
        ring.insert(b"o%d" % i)
    assert ring.bins["new"].load > 0


def test_added_bin_can_shadow_existing_key():
    # a key placed before a bin joined may route elsewhere afterwards
    shadowed = 0
    for seed in range(20):
        ring = build_ring(5, 1.0, 50, 0, "CH", seed=seed, address_bits=12)
        for i in range(50):
            ring.insert(b"o%d" % i)
        ring.add_bin("late")
        shadowed += sum(ring.lookup(b"o%d" % i) is None for i in range(50))
    assert shadowed > 0


# ---- observers ----------------------------------------------------------------

def test_empty_ring_observers():
    ring = build_ring(10, 0.1, 100, 0, "RJ_CH")
    assert ring.load_vector() == [0] * 10 and ring.full_fraction() == 0.0


def test_rj_placement_uniform_over_open_bins():
    ring = build_ring(30, 0.0, 90, 0, "RJ_CH", seed=11, address_bits=10)
    for b in range(0, 30, 3):
        ring.core.set_load(ring.bins[b].index, ring.capacity)
    probs = ring.placement_probabilities()
    assert len(probs) == 20
    assert all(abs(p - 1 / 20) < 1e-12 for p in probs.values())
    counts = Counter(ring.probe(b"q%d" % i).bin_id for i in range(100_000))
    obs = np.array([counts.get(b, 0) for b in sorted(probs)], dtype=float)
    assert sum(counts.values()) == obs.sum()
    assert chisquare(obs).pvalue > 0.001


def test_chbl_cascade_frequencies():
    # one full bin between two open ones: its successor absorbs its arc
    ring = build_ring(30, 0.0, 90, 0, "CH_BL", seed=12, address_bits=12)
    pos, own = ring.core.slot_table()
    full = int(own[5])
    ring.core.set_load(full, ring.capacity)
    succ = int(own[6])
    probs = ring.placement_probabilities()
    size = 1 << 12
    arc = lambda i: (int(pos[i]) - int(pos[i - 1])) % size / size
    assert probs[ring.bin_at(succ).id] == pytest.approx(arc(5) + arc(6))
    counts = Counter(ring.probe(b"q%d" % i).bin_id for i in range(100_000))
    ids = sorted(probs)
    obs = np.array([counts.get(b, 0) for b in ids], dtype=float)
    exp = np.array([probs[b] for b in ids]) * 100_000
    assert chisquare(obs, exp).pvalue > 0.001


def test_all_but_one_full_is_forced():
    for strategy in ("CH_BL", "RJ_CH"):
        ring = build_ring(8, 0.0, 16, 0, strategy, seed=13, address_bits=10)
        for b in range(7):
            ring.core.set_load(ring.bins[b].index, ring.capacity)
        assert ring.placement_probabilities() == {7: pytest.approx(1.0)}
        assert all(ring.probe(b"q%d" % i).bin_id == 7 for i in range(200))


def test_rehash_is_deterministic_per_bin():
    ring = build_ring(40, 0.1, 400, 0, "CH_BL_REHASH", seed=14, address_bits=14)
    for i in range(400):
        ring.insert(b"o%d" % i)
    a = [ring.probe(b"q%d" % i).bin_id for i in range(200)]
    assert a == [ring.probe(b"q%d" % i).bin_id for i in range(200)]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(BOUNDED), st.lists(st.tuples(st.booleans(), st.integers(0, 60)), max_size=120))
def test_random_ops_conserve_load(strategy, ops):
    ring = build_ring(6, 0.5, 24, 1, strategy, seed=1, address_bits=10)
    present = set()
    for is_insert, i in ops:
        key = b"k%d" % i
        if is_insert and key not in present:
            try:
                ring.insert(key)
                present.add(key)
            except RingOverflow:
                assert ring.full_fraction() == 1.0
        elif not is_insert:
            assert ring.remove_object(key) == (key in present)
            present.discard(key)
        assert sum(ring.load_vector()) == len(present) == len(ring)
        assert all(b.load <= ring.capacity for b in ring.alive_bins)
    for key in present:
        assert ring.lookup(key) is not None
