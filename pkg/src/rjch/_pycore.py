"""Pure-Python ring kernels, used when the compiled extension is unavailable.

Every function here has a twin in ``_core.pyx`` and must agree with it
exactly; ``tests/test_backends.py`` runs both side by side.
"""
from __future__ import annotations

import bisect

import numpy as np

from rjch.errors import ConfigurationError, RingOverflow

S_CH, S_CH_BL, S_CH_BL_REHASH, S_RJ_CH = 0, 1, 2, 3

CAP_UNBOUNDED = 1 << 62

_M64 = (1 << 64) - 1
_C1 = 0x87C37B91114253D5
_C2 = 0x4CF5AD432745937F


def _rotl64(x, r):
    return ((x << r) | (x >> (64 - r))) & _M64


def _fmix64(k):
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & _M64
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & _M64
    k ^= k >> 33
    return k


def murmur3_x64_128(data: bytes, seed: int) -> tuple[int, int]:
    """Return ``(h1, h2)`` of MurmurHash3_x64_128."""
    length = len(data)
    nblocks = length // 16
    h1 = h2 = seed & 0xFFFFFFFF
    for i in range(nblocks):
        k1 = int.from_bytes(data[16 * i : 16 * i + 8], "little")
        k2 = int.from_bytes(data[16 * i + 8 : 16 * i + 16], "little")
        k1 = (k1 * _C1) & _M64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _M64
        h1 ^= k1
        h1 = _rotl64(h1, 27)
        h1 = (h1 + h2) & _M64
        h1 = (h1 * 5 + 0x52DCE729) & _M64
        k2 = (k2 * _C2) & _M64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _M64
        h2 ^= k2
        h2 = _rotl64(h2, 31)
        h2 = (h2 + h1) & _M64
        h2 = (h2 * 5 + 0x38495AB5) & _M64

    tail = data[16 * nblocks :]
    rem = length & 15
    if rem > 8:
        k2 = int.from_bytes(tail[8:rem], "little")
        k2 = (k2 * _C2) & _M64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _M64
        h2 ^= k2
    if rem > 0:
        k1 = int.from_bytes(tail[: min(rem, 8)], "little")
        k1 = (k1 * _C1) & _M64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _M64
        h1 ^= k1

    h1 ^= length
    h2 ^= length
    h1 = (h1 + h2) & _M64
    h2 = (h2 + h1) & _M64
    h1 = _fmix64(h1)
    h2 = _fmix64(h2)
    h1 = (h1 + h2) & _M64
    h2 = (h2 + h1) & _M64
    return h1, h2


def _probe_words(base: bytes, attempt: int, seed: int) -> tuple[int, int, int, int]:
    h1, h2 = murmur3_x64_128(base + str(attempt).encode("ascii"), seed)
    return h2 >> 32, h2 & 0xFFFFFFFF, h1 >> 32, h1 & 0xFFFFFFFF


class RingCore:
    """Slot ownership plus per-bin load/capacity state for one ring."""

    def __init__(self, bits: int, seed: int, n_bins: int = 0):
        if bits < 1 or bits > 32:
            raise ConfigurationError(f"address bits must be in [1, 32], got {bits}")
        self.bits = bits
        self.seed = seed & 0xFFFFFFFF
        self.size = 1 << bits
        self.mask = self.size - 1
        self.shift = 32 - bits
        self.n_bins = n_bins
        self.n_open = 0
        self._cap: list[int] = [CAP_UNBOUNDED] * n_bins
        self._load: list[int] = [0] * n_bins
        self._down: list[bool] = [False] * n_bins
        self._nslots: list[int] = [0] * n_bins
        self._home: list[int] = [-1] * n_bins
        self._slot_owner: dict[int, int] = {}
        self._pos: list[int] = []
        self._own: list[int] = []
        self._dirty = False

    def ensure_bins(self, n: int) -> None:
        extra = n - self.n_bins
        if extra > 0:
            self._cap += [CAP_UNBOUNDED] * extra
            self._load += [0] * extra
            self._down += [False] * extra
            self._nslots += [0] * extra
            self._home += [-1] * extra
            self.n_bins = n

    def _is_open(self, b: int) -> bool:
        return self._nslots[b] > 0 and not self._down[b] and self._load[b] < self._cap[b]

    def _open_delta(self, b: int, before: bool) -> None:
        after = self._is_open(b)
        if after and not before:
            self.n_open += 1
        elif before and not after:
            self.n_open -= 1

    def set_capacity(self, b, c):
        before = self._is_open(b)
        self._cap[b] = c
        self._open_delta(b, before)

    def set_load(self, b, v):
        before = self._is_open(b)
        self._load[b] = v
        self._open_delta(b, before)

    def add_load(self, b, delta):
        before = self._is_open(b)
        self._load[b] += delta
        self._open_delta(b, before)

    def set_down(self, b, flag):
        before = self._is_open(b)
        self._down[b] = bool(flag)
        self._open_delta(b, before)

    def get_load(self, b):
        return self._load[b]

    def get_capacity(self, b):
        return self._cap[b]

    def is_down(self, b):
        return self._down[b]

    def is_open(self, b):
        return self._is_open(b)

    def loads(self):
        return np.asarray(self._load, dtype=np.int64)

    def capacities(self):
        return np.asarray(self._cap, dtype=np.int64)

    def open_mask(self):
        return np.array([self._is_open(b) for b in range(self.n_bins)], dtype=bool)

    def slot_counts(self):
        return np.asarray(self._nslots, dtype=np.int32)

    def owner(self, slot: int) -> int:
        return self._slot_owner.get(slot, -1)

    def home_slot(self, b: int) -> int:
        return self._home[b]

    def add_slot(self, slot: int, b: int) -> None:
        if slot >= self.size:
            raise ValueError("slot out of range")
        if slot in self._slot_owner:
            raise KeyError(f"slot {slot} already occupied")
        before = self._is_open(b)
        self._slot_owner[slot] = b
        if self._nslots[b] == 0:
            self._home[b] = slot
        self._nslots[b] += 1
        self._dirty = True
        self._open_delta(b, before)

    def remove_slot(self, slot: int) -> int:
        b = self._slot_owner.pop(slot)
        before = self._is_open(b)
        self._nslots[b] -= 1
        if self._nslots[b] == 0:
            self._home[b] = -1
        self._dirty = True
        self._open_delta(b, before)
        return b

    def occupied(self, slot: int) -> bool:
        return slot in self._slot_owner

    def _rebuild(self) -> None:
        if self._dirty:
            items = sorted(self._slot_owner.items())
            self._pos = [p for p, _ in items]
            self._own = [b for _, b in items]
            self._dirty = False

    def slot_table(self):
        self._rebuild()
        return np.asarray(self._pos, dtype=np.uint32), np.asarray(self._own, dtype=np.int32)

    # ---- routing ---------------------------------------------------------
    def route(self, strategy, key, holders=(), first_slot=-1, literal=False):
        self._rebuild()
        out = [0, 0, 0]
        if strategy == S_RJ_CH:
            b = self._route_jump(key, holders, first_slot, out)
        elif strategy == S_CH_BL_REHASH:
            b = self._route_rehash(key, holders, first_slot, out)
        else:
            b = self._route_walk(strategy, key, holders, first_slot, out)
        return b, bool(out[0]), out[1], out[2]

    def fill(self, strategy, keys, first_slots=None):
        self._rebuild()
        bins = np.empty(len(keys), dtype=np.int32)
        first_full = -1
        for i, key in enumerate(keys):
            f = -1 if first_slots is None else int(first_slots[i])
            out = [0, 0, 0]
            if strategy == S_RJ_CH:
                b = self._route_jump(key, (), f, out)
            elif strategy == S_CH_BL_REHASH:
                b = self._route_rehash(key, (), f, out)
            else:
                b = self._route_walk(strategy, key, (), f, out)
            if b < 0:
                raise RingOverflow(f"no open bin for object {i}", placed=i, bins=bins[:i].copy())
            self.add_load(b, 1)
            bins[i] = b
            if first_full < 0 and strategy != S_CH and self._load[b] >= self._cap[b]:
                first_full = i + 1
        return bins, first_full

    def _start_slot(self, key, first_slot):
        if first_slot >= 0:
            return first_slot
        return _probe_words(key, 0, self.seed)[0] >> self.shift

    def _visit(self, strategy, b, holders, out) -> bool:
        out[1] += 1
        if self._down[b]:
            return False
        if holders and b in holders:
            out[0] = 1
            return True
        return strategy == S_CH or self._load[b] < self._cap[b]

    def _walk_from(self, strategy, s, holders, out):
        m = len(self._pos)
        if m == 0:
            return -1
        i0 = bisect.bisect_left(self._pos, s)
        for j in range(m):
            idx = (i0 + j) % m
            b = self._own[idx]
            if self._visit(strategy, b, holders, out):
                out[2] += ((self._pos[idx] - s) & self.mask) + 1
                return b
        out[2] += self.size
        return -1

    def _route_walk(self, strategy, key, holders, first_slot, out):
        if not self._pos:
            return -1
        if strategy != S_CH and not holders and self.n_open == 0:
            return -1
        return self._walk_from(strategy, self._start_slot(key, first_slot), holders, out)

    def _rehash_slot(self, home: int) -> int:
        # uniform over ring positions, like stepping to bin h(i) instead of i+1
        h1, h2 = murmur3_x64_128(b"rehash:" + str(home).encode("ascii"), self.seed)
        return self._pos[h2 % len(self._pos)]

    def _route_rehash(self, key, holders, first_slot, out):
        m = len(self._pos)
        if m == 0:
            return -1
        if not holders and self.n_open == 0:
            return -1
        s = self._start_slot(key, first_slot)
        rehashes = 0
        while True:
            idx = bisect.bisect_left(self._pos, s) % m
            b = self._own[idx]
            out[2] += ((self._pos[idx] - s) & self.mask) + 1
            if self._visit(S_CH_BL, b, holders, out):
                return b
            if rehashes >= m:
                s = (self._pos[idx] + 1) & self.mask
                return self._walk_from(S_CH_BL, s, holders, out)
            rehashes += 1
            s = self._rehash_slot(self._home[b])

    def _route_jump(self, key, holders, first_slot, out):
        m = len(self._pos)
        if m == 0:
            return -1
        if not holders and self.n_open == 0:
            return -1
        budget = 64 * m + 1024
        owner = self._slot_owner
        attempt = 0
        while True:
            words = _probe_words(key, attempt, self.seed)
            for r in range(4):
                if attempt == 0 and r == 0 and first_slot >= 0:
                    q = first_slot
                else:
                    q = words[r] >> self.shift
                out[2] += 1
                b = owner.get(q, -1)
                if b < 0:
                    continue
                if self._visit(S_RJ_CH, b, holders, out):
                    return b
                if out[1] >= budget:
                    return -1
            attempt += 1


def idealized_merge_variance(k: int, j_max: int, uniforms) -> np.ndarray:
    """One trial of the equal-probability cascade process (see ``_core``)."""
    if j_max > k - 1:
        raise ValueError("j_max must be <= k - 1")
    if len(uniforms) < j_max:
        raise ValueError("need one uniform per step")
    out = np.zeros(j_max + 1, dtype=np.float64)
    p = [1.0 / k] * k
    nxt = [(i + 1) % k for i in range(k)]
    prv = [(i - 1) % k for i in range(k)]
    alive = list(range(k))
    sumsq = 0.0
    for i in range(k):
        sumsq += p[i] * p[i]
    out[0] = 0.0  # uniform start
    for j in range(1, j_max + 1):
        remaining = k - j + 1
        r = int(uniforms[j - 1] * remaining)
        if r >= remaining:
            r = remaining - 1
        idx = alive[r]
        succ = nxt[idx]
        pre = prv[idx]
        a = p[idx]
        c = p[succ]
        sumsq += 2.0 * a * c
        p[succ] = a + c
        p[idx] = 0.0
        nxt[pre] = succ
        prv[succ] = pre
        alive[r] = alive[remaining - 1]
        remaining -= 1
        out[j] = sumsq / remaining - (1.0 / remaining) * (1.0 / remaining)
    return out
