"""The slot-array ring and its placement strategies.

Bins own one home slot plus ``v`` virtual slots in a ``2**address_bits``
address space.  Slot ownership, loads and capacities live in a
:class:`RingCore` from the selected backend; this module keeps the
object-level bookkeeping (which keys sit in which bin) and the lifecycle
operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import numpy as np

from rjch._backend import RingCore
from rjch.errors import ConfigurationError, NoAliveBin, RingOverflow, RingSaturated
from rjch.hashing import DEFAULT_BITS, ProbeKey, bias_hit, check_bits, digest, fold_seed

CAP_UNBOUNDED = 1 << 62


def probe_base(key: bytes) -> bytes:
    """Length-prefixed key used as the hashing base.

    Without the prefix, ``b"obj1" + b"10"`` and ``b"obj11" + b"0"`` hash the
    same string and the two keys share the tail of their probe sequences.
    """
    return b"%d:" % len(key) + key


class Strategy(IntEnum):
    CH = 0
    CH_BL = 1
    CH_BL_REHASH = 2
    RJ_CH = 3

    @classmethod
    def parse(cls, name: "str | Strategy") -> "Strategy":
        if isinstance(name, Strategy):
            return name
        try:
            return cls[name.upper().replace("-", "_")]
        except KeyError:
            raise ConfigurationError(f"unknown strategy {name!r}") from None

    @property
    def bounded(self) -> bool:
        return self is not Strategy.CH


def capacity_for(n_expected: int, k: int, epsilon: float) -> int:
    """``ceil((1 + epsilon) * n / k)``, computed exactly.

    Epsilon goes through its decimal repr so that 0.1 means one tenth;
    ``1.1 * 10000 / 1000`` in binary floating point would round up to 12.
    """
    if k < 1:
        raise ConfigurationError("need at least one bin")
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    return math.ceil((1 + Fraction(repr(float(epsilon)))) * n_expected / k)


@dataclass
class PlacementOutcome:
    bin_id: Hashable
    bin_searches: int
    slot_steps: int


@dataclass(eq=False)
class Bin:
    id: Hashable
    index: int
    capacity: int | None
    slots: list[int] = field(default_factory=list)
    # insertion-ordered so relocation order never depends on hash seeds
    keys: dict = field(default_factory=dict)
    alive: bool = True
    # full 32-bit hash words behind each slot, for the 2**32 remap
    slot_words: list[int] = field(default_factory=list)

    @property
    def load(self) -> int:
        return len(self.keys)

    @property
    def full(self) -> bool:
        return self.capacity is not None and self.load >= self.capacity


@dataclass
class RelocationStats:
    outcomes: list[PlacementOutcome] = field(default_factory=list)
    dropped: list = field(default_factory=list)

    @property
    def relocated(self) -> int:
        return len(self.outcomes)

    @property
    def total_bin_searches(self) -> int:
        return sum(o.bin_searches for o in self.outcomes)

    @property
    def total_slot_steps(self) -> int:
        return sum(o.slot_steps for o in self.outcomes)


class RingTable:
    """A consistent-hashing ring with a fixed placement strategy."""

    def __init__(
        self,
        strategy: Strategy | str,
        capacity: int | None,
        virtual_copies: int = 0,
        seed: int = 0,
        address_bits: int = DEFAULT_BITS,
        n_expected: int | None = None,
        epsilon: float | None = None,
    ):
        self.strategy = Strategy.parse(strategy)
        if self.strategy.bounded and (capacity is None or capacity < 1):
            raise ConfigurationError("bounded strategies need a positive capacity")
        self.capacity = capacity if self.strategy.bounded else None
        self.virtual_copies = int(virtual_copies)
        if self.virtual_copies < 0:
            raise ConfigurationError("virtual copies must be non-negative")
        self.seed = seed
        self.address_bits = check_bits(address_bits)
        self.n_expected = n_expected
        self.epsilon = epsilon
        self.core = RingCore(self.address_bits, fold_seed(seed), 0)
        self.bins: dict[Hashable, Bin] = {}
        self._by_index: list[Bin] = []
        self._where: dict[bytes, list[int]] = {}
        self._bias: tuple[int, float] | None = None
        self._slots_used = 0

    # ---- construction ----------------------------------------------------
    @property
    def slots_per_bin(self) -> int:
        return 1 + self.virtual_copies

    def _bin_base(self, bin_id: Hashable) -> bytes:
        return probe_base(b"bin:" + str(bin_id).encode())

    def add_bin(self, bin_id: Hashable) -> Bin:
        """Hash a new bin onto free slots; existing objects stay where they are."""
        if bin_id in self.bins:
            raise ConfigurationError(f"bin {bin_id!r} already exists")
        if self._slots_used + self.slots_per_bin > (1 << self.address_bits):
            raise RingSaturated("ring saturated")
        index = len(self._by_index)
        self.core.ensure_bins(index + 1)
        cap = self.capacity if self.capacity is not None else CAP_UNBOUNDED
        self.core.set_capacity(index, cap)
        b = Bin(id=bin_id, index=index, capacity=self.capacity)
        shift = 32 - self.address_bits
        base = self._bin_base(bin_id)
        attempt = 0
        while len(b.slots) < self.slots_per_bin:
            words = digest(self.seed, ProbeKey(base, attempt).encode()).words()
            for w in words:
                slot = w >> shift
                if len(b.slots) < self.slots_per_bin and not self.core.occupied(slot):
                    self.core.add_slot(slot, index)
                    b.slots.append(slot)
                    b.slot_words.append(w)
            attempt += 1
        self.bins[bin_id] = b
        self._by_index.append(b)
        self._slots_used += len(b.slots)
        return b

    # ---- helpers ---------------------------------------------------------
    def bin_at(self, index: int) -> Bin:
        return self._by_index[index]

    @property
    def alive_bins(self) -> list[Bin]:
        return [b for b in self._by_index if b.alive]

    def set_bias(self, hotspot: int, bias_p: float) -> None:
        """Route a ``bias_p`` fraction of objects' first probe to ``hotspot``."""
        if not 0 <= hotspot < (1 << self.address_bits):
            raise ValueError("hotspot outside the address space")
        if not 0.0 <= bias_p <= 1.0:
            raise ValueError("bias_p must be in [0, 1]")
        self._bias = (hotspot, bias_p) if bias_p > 0 else None

    def first_slot(self, key: bytes) -> int:
        if self._bias is None:
            return -1
        hotspot, p = self._bias
        return hotspot if bias_hit(self.seed, ProbeKey(probe_base(key), 0).encode(), p) else -1

    def _check_placeable(self) -> None:
        if not any(b.alive for b in self._by_index):
            raise NoAliveBin("ring has no alive bin")

    # ---- object operations -----------------------------------------------
    def route(self, key: bytes, holders: Sequence[int] = ()) -> tuple[int, bool, int, int]:
        return self.core.route(int(self.strategy), probe_base(key), tuple(holders), self.first_slot(key))

    def insert(self, key: bytes) -> PlacementOutcome:
        key = bytes(key)
        holders = self._where.get(key, ())
        b, found, searches, steps = self.route(key, holders)
        if found:
            raise ValueError(f"key {key!r} already present")
        if b < 0:
            self._check_placeable()
            raise RingOverflow("all alive bins are full")
        self._commit(key, b)
        return PlacementOutcome(self._by_index[b].id, searches, steps)

    def _commit(self, key: bytes, b: int) -> None:
        self.core.add_load(b, 1)
        self._by_index[b].keys[key] = None
        self._where.setdefault(key, []).append(b)

    def insert_many(self, keys: Sequence[bytes]) -> int:
        """Place a batch of fresh keys; returns objects placed when the
        first bin filled (or -1).  Keys must not already be present."""
        keys = [bytes(k) for k in keys]
        first_slots = None
        if self._bias is not None:
            first_slots = np.array([self.first_slot(k) for k in keys], dtype=np.int64)
        try:
            bins, first_full = self.core.fill(int(self.strategy), [probe_base(k) for k in keys], first_slots)
        except RingOverflow as exc:
            self._record_batch(keys[: exc.placed], exc.bins)
            if exc.placed == 0:
                self._check_placeable()
            raise
        self._record_batch(keys, bins)
        return first_full

    def _record_batch(self, keys, bins) -> None:
        by_index = self._by_index
        where = self._where
        for key, b in zip(keys, bins.tolist()):
            by_index[b].keys[key] = None
            where.setdefault(key, []).append(b)

    def probe(self, key: bytes) -> PlacementOutcome:
        """Where ``key`` would be placed, without placing it."""
        b, found, searches, steps = self.route(bytes(key))
        if b < 0:
            self._check_placeable()
            raise RingOverflow("all alive bins are full")
        return PlacementOutcome(self._by_index[b].id, searches, steps)

    def lookup(self, key: bytes) -> Hashable | None:
        key = bytes(key)
        b, found, _, _ = self.route(key, self._where.get(key, ()))
        return self._by_index[b].id if found else None

    def lookup_cost(self, key: bytes) -> tuple[Hashable | None, int, int]:
        key = bytes(key)
        b, found, searches, steps = self.route(key, self._where.get(key, ()))
        return (self._by_index[b].id if found else None), searches, steps

    def remove_object(self, key: bytes) -> bool:
        key = bytes(key)
        holders = self._where.pop(key, None)
        if not holders:
            return False
        for b in holders:
            del self._by_index[b].keys[key]
            self.core.add_load(b, -1)
        return True

    def __contains__(self, key: bytes) -> bool:
        return bytes(key) in self._where

    def __len__(self) -> int:
        return sum(b.load for b in self._by_index)

    # ---- bin removal -----------------------------------------------------
    def remove_bin(self, bin_id: Hashable, mode: str = "lazy") -> RelocationStats:
        """Vacate a bin's slots.  ``lazy`` drops its keys; ``eager`` re-inserts
        each of them immediately and records the per-object cost."""
        if mode not in ("lazy", "eager"):
            raise ValueError("mode must be 'lazy' or 'eager'")
        b = self.bins.get(bin_id)
        if b is None or not b.alive:
            raise KeyError(f"unknown bin {bin_id!r}")
        keys = list(b.keys)
        for slot in b.slots:
            self.core.remove_slot(slot)
        self._slots_used -= len(b.slots)
        b.alive = False
        for key in keys:
            holders = self._where[key]
            holders.remove(b.index)
            if not holders:
                del self._where[key]
        b.keys.clear()
        self.core.set_load(b.index, 0)
        del self.bins[bin_id]
        stats = RelocationStats()
        if mode == "lazy":
            stats.dropped = keys
            return stats
        for key in keys:
            if key in self._where:
                continue
            try:
                stats.outcomes.append(self.insert(key))
            except (RingOverflow, NoAliveBin):
                stats.dropped.append(key)
        return stats

    # ---- observers -------------------------------------------------------
    def load_vector(self) -> list[int]:
        return [b.load for b in self._by_index if b.alive]

    def full_fraction(self) -> float:
        alive = self.alive_bins
        if not alive or self.capacity is None:
            return 0.0
        return sum(1 for b in alive if b.load >= self.capacity) / len(alive)

    def full_count(self) -> int:
        if self.capacity is None:
            return 0
        return sum(1 for b in self._by_index if b.alive and b.load >= self.capacity)

    def placement_probabilities(self) -> dict[Hashable, float]:
        """Exact next-object placement probability of every open bin.

        Walk strategies: the arc (in slots) ending at each open slot, extended
        back over every blocked slot before it.  RJ_CH: each open bin's share
        of open slots.  CH_BL_REHASH is not covered (its mass moves by rehash).
        """
        if self.strategy is Strategy.CH_BL_REHASH:
            raise NotImplementedError("no closed form for the rehash variant")
        pos, own = self.core.slot_table()
        if len(pos) == 0:
            return {}
        if self.strategy is Strategy.CH:
            is_open = np.array([not self.core.is_down(int(b)) for b in own], dtype=bool)
        else:
            is_open = self.core.open_mask()[own]
        if not is_open.any():
            return {}
        probs: dict[Hashable, float] = {}
        if self.strategy is Strategy.RJ_CH:
            total = int(is_open.sum())
            for b, o in zip(own.tolist(), is_open.tolist()):
                if o:
                    bid = self._by_index[b].id
                    probs[bid] = probs.get(bid, 0.0) + 1.0 / total
            return probs
        size = 1 << self.address_bits
        pos = pos.astype(np.int64)
        open_idx = np.flatnonzero(is_open)
        prev = np.roll(open_idx, 1)
        arc = (pos[open_idx] - pos[prev]) % size
        if len(open_idx) == 1:
            arc = np.array([size])
        for i, a in zip(open_idx.tolist(), arc.tolist()):
            bid = self._by_index[int(own[i])].id
            probs[bid] = probs.get(bid, 0.0) + a / size
        return probs

    def remapped_core(self, bits: int = 32):
        """A copy of the core on a ``2**bits`` address space, keeping every
        bin's loads; slots come from the same hash words (top ``bits``)."""
        check_bits(bits)
        core = RingCore(bits, fold_seed(self.seed), len(self._by_index))
        shift = 32 - bits
        for b in self._by_index:
            core.set_capacity(b.index, self.core.get_capacity(b.index))
            core.set_load(b.index, self.core.get_load(b.index))
            core.set_down(b.index, self.core.is_down(b.index))
            if not b.alive:
                continue
            for w in b.slot_words:
                slot = w >> shift
                while core.occupied(slot):
                    slot = (slot + 1) & ((1 << bits) - 1)
                core.add_slot(slot, b.index)
        return core


def build_ring(
    k: int,
    epsilon: float,
    n_expected: int,
    v: int = 0,
    strategy: Strategy | str = Strategy.RJ_CH,
    seed: int = 0,
    address_bits: int = DEFAULT_BITS,
    bin_ids: Iterable[Hashable] | None = None,
) -> RingTable:
    """Build a ring of ``k`` bins, each with capacity ``ceil((1+eps)n/k)``."""
    strategy = Strategy.parse(strategy)
    if k < 1:
        raise ConfigurationError("need at least one bin")
    if n_expected < 1:
        raise ConfigurationError("n_expected must be positive")
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    check_bits(address_bits)
    if k * (1 + v) > (1 << address_bits):
        raise RingSaturated("ring saturated")
    cap = capacity_for(n_expected, k, epsilon) if strategy.bounded else None
    table = RingTable(strategy, cap, v, seed, address_bits, n_expected=n_expected, epsilon=epsilon)
    ids = list(bin_ids) if bin_ids is not None else list(range(k))
    if len(ids) != k:
        raise ConfigurationError("bin_ids must have k entries")
    table.core.ensure_bins(k)
    for bid in ids:
        table.add_bin(bid)
    return table
