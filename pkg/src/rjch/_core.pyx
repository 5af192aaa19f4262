# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ring kernels.

Mirrors :mod:`rjch._pycore` operation for operation; the two must produce
identical routing decisions and counters for every input.
"""
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t, int64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

from rjch.errors import ConfigurationError

cnp.import_array()

cdef extern from "_murmur3.h":
    void rjch_murmur3_x64_128(const void *key, size_t len, uint32_t seed,
                              uint64_t *out_h1, uint64_t *out_h2) nogil

DEF DENSE_MAX_BITS = 24
DEF KEYBUF = 512
DEF MAX_HOLDERS = 64

# strategy codes, kept in sync with rjch.ring.Strategy
DEF S_CH = 0
DEF S_CH_BL = 1
DEF S_CH_BL_REHASH = 2
DEF S_RJ_CH = 3

CAP_UNBOUNDED = (1 << 62)


def murmur3_x64_128(bytes data, uint32_t seed):
    """Return ``(h1, h2)`` of MurmurHash3_x64_128."""
    cdef uint64_t h1, h2
    cdef const unsigned char[:] view = data
    if len(data) == 0:
        rjch_murmur3_x64_128(NULL, 0, seed, &h1, &h2)
    else:
        rjch_murmur3_x64_128(&view[0], len(data), seed, &h1, &h2)
    return h1, h2


cdef inline int _write_decimal(unsigned char *out, uint64_t v) noexcept nogil:
    cdef unsigned char tmp[24]
    cdef int n = 0, i
    if v == 0:
        out[0] = 48
        return 1
    while v > 0:
        tmp[n] = <unsigned char>(48 + v % 10)
        v //= 10
        n += 1
    for i in range(n):
        out[i] = tmp[n - 1 - i]
    return n


cdef inline void _probe_words(const unsigned char *buf, size_t base_len, uint64_t attempt,
                              uint32_t seed, uint32_t *words) noexcept nogil:
    # buf has room for base_len + 24 bytes; base bytes already copied in
    cdef unsigned char *p = <unsigned char *>buf
    cdef int n = _write_decimal(p + base_len, attempt)
    cdef uint64_t h1, h2
    rjch_murmur3_x64_128(buf, base_len + n, seed, &h1, &h2)
    words[0] = <uint32_t>(h2 >> 32)
    words[1] = <uint32_t>(h2 & 0xffffffffULL)
    words[2] = <uint32_t>(h1 >> 32)
    words[3] = <uint32_t>(h1 & 0xffffffffULL)


cdef class RingCore:
    """Slot ownership plus per-bin load/capacity state for one ring."""

    cdef readonly int bits
    cdef readonly uint32_t seed
    cdef uint64_t size
    cdef uint64_t mask
    cdef int shift
    cdef object _cap, _load, _down, _nslots, _home, _dense, _pos, _own
    cdef int64_t[::1] cap
    cdef int64_t[::1] load
    cdef uint8_t[::1] down
    cdef int32_t[::1] nslots
    cdef int64_t[::1] home
    cdef int32_t[::1] dense
    cdef uint32_t[::1] pos
    cdef int32_t[::1] own
    cdef dict slot_owner
    cdef int m
    cdef bint dirty
    cdef readonly int n_bins
    cdef readonly int64_t n_open

    def __init__(self, int bits, uint32_t seed, int n_bins=0):
        if bits < 1 or bits > 32:
            raise ConfigurationError(f"address bits must be in [1, 32], got {bits}")
        self.bits = bits
        self.seed = seed
        self.size = (<uint64_t>1) << bits
        self.mask = self.size - 1
        self.shift = 32 - bits
        self.slot_owner = {}
        self.m = 0
        self.dirty = False
        self.n_bins = 0
        self.n_open = 0
        self._alloc(max(n_bins, 8))
        if bits <= DENSE_MAX_BITS:
            self._dense = np.full(self.size, -1, dtype=np.int32)
            self.dense = self._dense
        self._pos = np.zeros(0, dtype=np.uint32)
        self._own = np.zeros(0, dtype=np.int32)
        self.pos = self._pos
        self.own = self._own
        self.n_bins = n_bins

    cdef _alloc(self, int n):
        old = self.n_bins
        cap = np.full(n, CAP_UNBOUNDED, dtype=np.int64)
        load = np.zeros(n, dtype=np.int64)
        down = np.zeros(n, dtype=np.uint8)
        nslots = np.zeros(n, dtype=np.int32)
        home = np.full(n, -1, dtype=np.int64)
        if old:
            cap[:old] = self._cap[:old]
            load[:old] = self._load[:old]
            down[:old] = self._down[:old]
            nslots[:old] = self._nslots[:old]
            home[:old] = self._home[:old]
        self._cap, self._load, self._down, self._nslots, self._home = cap, load, down, nslots, home
        self.cap, self.load, self.down, self.nslots, self.home = cap, load, down, nslots, home

    def ensure_bins(self, int n):
        if n > self._cap.shape[0]:
            self._alloc(max(n, 2 * self._cap.shape[0]))
        if n > self.n_bins:
            self.n_bins = n

    cdef inline bint _is_open(self, int b) noexcept nogil:
        return self.nslots[b] > 0 and not self.down[b] and self.load[b] < self.cap[b]

    cdef inline void _open_delta(self, int b, bint before) noexcept nogil:
        cdef bint after = self._is_open(b)
        if after and not before:
            self.n_open += 1
        elif before and not after:
            self.n_open -= 1

    # ---- bin state -------------------------------------------------------
    def set_capacity(self, int b, int64_t c):
        cdef bint before = self._is_open(b)
        self.cap[b] = c
        self._open_delta(b, before)

    def set_load(self, int b, int64_t v):
        cdef bint before = self._is_open(b)
        self.load[b] = v
        self._open_delta(b, before)

    def add_load(self, int b, int64_t delta):
        cdef bint before = self._is_open(b)
        self.load[b] += delta
        self._open_delta(b, before)

    cdef inline void _bump(self, int b, int64_t delta) noexcept nogil:
        cdef bint before = self._is_open(b)
        self.load[b] += delta
        self._open_delta(b, before)

    def set_down(self, int b, bint flag):
        cdef bint before = self._is_open(b)
        self.down[b] = flag
        self._open_delta(b, before)

    def get_load(self, int b):
        return self.load[b]

    def get_capacity(self, int b):
        return self.cap[b]

    def is_down(self, int b):
        return bool(self.down[b])

    def is_open(self, int b):
        return bool(self._is_open(b))

    def loads(self):
        return np.asarray(self._load[: self.n_bins]).copy()

    def capacities(self):
        return np.asarray(self._cap[: self.n_bins]).copy()

    def open_mask(self):
        cdef int b
        out = np.zeros(self.n_bins, dtype=bool)
        for b in range(self.n_bins):
            out[b] = self._is_open(b)
        return out

    def slot_counts(self):
        return np.asarray(self._nslots[: self.n_bins]).copy()

    # ---- slots -----------------------------------------------------------
    def owner(self, uint64_t slot):
        self._rebuild()
        return self._owner(<uint32_t>slot)

    def home_slot(self, int b):
        return self.home[b]

    def add_slot(self, uint64_t slot, int b):
        if slot >= self.size:
            raise ValueError("slot out of range")
        if slot in self.slot_owner:
            raise KeyError(f"slot {slot} already occupied")
        cdef bint before = self._is_open(b)
        self.slot_owner[slot] = b
        if self.bits <= DENSE_MAX_BITS:
            self.dense[slot] = b
        if self.nslots[b] == 0:
            self.home[b] = slot
        self.nslots[b] += 1
        self.dirty = True
        self._open_delta(b, before)

    def remove_slot(self, uint64_t slot):
        b = self.slot_owner.pop(slot)
        cdef bint before = self._is_open(b)
        if self.bits <= DENSE_MAX_BITS:
            self.dense[slot] = -1
        self.nslots[b] -= 1
        if self.nslots[b] == 0:
            self.home[b] = -1
        self.dirty = True
        self._open_delta(b, before)
        return b

    def occupied(self, uint64_t slot):
        return slot in self.slot_owner

    def slot_table(self):
        """Sorted ``(positions, owners)`` arrays of every occupied slot."""
        self._rebuild()
        return np.asarray(self._pos).copy(), np.asarray(self._own).copy()

    cdef _rebuild(self):
        if not self.dirty:
            return
        if self.slot_owner:
            keys = np.fromiter(self.slot_owner.keys(), dtype=np.uint32, count=len(self.slot_owner))
            vals = np.fromiter(self.slot_owner.values(), dtype=np.int32, count=len(self.slot_owner))
            order = np.argsort(keys, kind="stable")
            self._pos = np.ascontiguousarray(keys[order])
            self._own = np.ascontiguousarray(vals[order])
        else:
            self._pos = np.zeros(0, dtype=np.uint32)
            self._own = np.zeros(0, dtype=np.int32)
        self.pos = self._pos
        self.own = self._own
        self.m = self._pos.shape[0]
        self.dirty = False

    cdef inline int _lower_bound(self, uint32_t s) noexcept nogil:
        cdef int lo = 0, hi = self.m, mid
        while lo < hi:
            mid = (lo + hi) >> 1
            if self.pos[mid] < s:
                lo = mid + 1
            else:
                hi = mid
        return lo

    cdef inline int _owner(self, uint32_t s) noexcept nogil:
        cdef int i
        if self.bits <= DENSE_MAX_BITS:
            return self.dense[s]
        i = self._lower_bound(s)
        if i < self.m and self.pos[i] == s:
            return self.own[i]
        return -1

    # ---- routing ---------------------------------------------------------
    def route(self, int strategy, bytes key, holders=(), int64_t first_slot=-1,
              bint literal=False):
        """Walk the strategy's visitation order for ``key``.

        Returns ``(bin, found, bin_searches, slot_steps)``; ``bin`` is -1 when
        no alive bin can take or holds the key.
        """
        cdef int32_t hs[MAX_HOLDERS]
        cdef int nh = len(holders), i
        if nh > MAX_HOLDERS:
            raise ValueError("too many holders")
        for i in range(nh):
            hs[i] = holders[i]
        self._rebuild()
        cdef int64_t out[3]
        cdef int b = self._route(strategy, key, hs, nh, first_slot, literal, out)
        return b, bool(out[0]), out[1], out[2]

    def fill(self, int strategy, list keys, first_slots=None):
        """Place every key in order; returns ``(bins, first_full)``.

        ``first_full`` is the 1-based count of placed objects at the moment a
        bin first reached capacity, or -1.
        """
        cdef Py_ssize_t n = len(keys), i
        bins = np.empty(n, dtype=np.int32)
        cdef int32_t[::1] bv = bins
        cdef int64_t[::1] fs
        cdef bint have_fs = first_slots is not None
        if have_fs:
            fs = np.ascontiguousarray(first_slots, dtype=np.int64)
        cdef int32_t hs[1]
        cdef int64_t out[3]
        cdef int64_t first_full = -1
        cdef int b
        cdef int64_t f
        self._rebuild()
        for i in range(n):
            f = fs[i] if have_fs else -1
            b = self._route(strategy, keys[i], hs, 0, f, False, out)
            if b < 0:
                from rjch.errors import RingOverflow
                raise RingOverflow(f"no open bin for object {i}", placed=i, bins=bins[:i].copy())
            self._bump(b, 1)
            bv[i] = b
            if first_full < 0 and strategy != S_CH and self.load[b] >= self.cap[b]:
                first_full = i + 1
        return bins, first_full

    cdef int _route(self, int strategy, bytes key, int32_t *hs, int nh, int64_t first_slot,
                    bint literal, int64_t *out):
        cdef const unsigned char *kp = key
        cdef size_t klen = len(key)
        cdef unsigned char stackbuf[KEYBUF]
        cdef unsigned char *buf = stackbuf
        cdef int b
        if klen + 24 > KEYBUF:
            buf = <unsigned char *>malloc(klen + 24)
            if buf == NULL:
                raise MemoryError()
        memcpy(buf, kp, klen)
        try:
            if strategy == S_RJ_CH:
                b = self._route_jump(buf, klen, hs, nh, first_slot, out)
            elif strategy == S_CH_BL_REHASH:
                b = self._route_rehash(buf, klen, hs, nh, first_slot, literal, out)
            else:
                b = self._route_walk(strategy, buf, klen, hs, nh, first_slot, literal, out)
        finally:
            if buf != stackbuf:
                free(buf)
        return b

    cdef inline uint32_t _start_slot(self, unsigned char *buf, size_t klen,
                                     int64_t first_slot) noexcept nogil:
        cdef uint32_t w[4]
        if first_slot >= 0:
            return <uint32_t>first_slot
        _probe_words(buf, klen, 0, self.seed, w)
        return <uint32_t>(w[0] >> self.shift) if self.shift < 32 else 0

    cdef inline int _is_holder(self, int b, int32_t *hs, int nh) noexcept nogil:
        cdef int i
        for i in range(nh):
            if hs[i] == b:
                return 1
        return 0

    cdef inline uint64_t _dist(self, uint32_t a, uint32_t b) noexcept nogil:
        return (<uint64_t>b - <uint64_t>a) & self.mask

    cdef inline uint64_t _literal_dist(self, uint32_t a, uint32_t b) noexcept nogil:
        cdef uint64_t cur = a, steps = 0
        while cur != b:
            cur = (cur + 1) & self.mask
            steps += 1
        return steps

    cdef int _visit(self, int strategy, int b, int32_t *hs, int nh, int64_t *out) noexcept nogil:
        """1 = take (found or place), 0 = blocked; sets out[0] on holder hit."""
        out[1] += 1
        if self.down[b]:
            return 0
        if nh and self._is_holder(b, hs, nh):
            out[0] = 1
            return 1
        if strategy == S_CH or self.load[b] < self.cap[b]:
            return 1
        return 0

    cdef int _walk_from(self, int strategy, uint32_t s, int32_t *hs, int nh, bint literal,
                        int64_t *out, int *stop_idx):
        # one clockwise cycle over slot entries starting at the first >= s
        cdef int i0, j, idx, b
        if self.m == 0:
            return -1
        i0 = self._lower_bound(s)
        for j in range(self.m):
            idx = (i0 + j) % self.m
            b = self.own[idx]
            if self._visit(strategy, b, hs, nh, out):
                if literal:
                    out[2] += <int64_t>self._literal_dist(s, self.pos[idx]) + 1
                else:
                    out[2] += <int64_t>self._dist(s, self.pos[idx]) + 1
                stop_idx[0] = idx
                return b
        out[2] += <int64_t>self.size
        stop_idx[0] = -1
        return -1

    cdef int _route_walk(self, int strategy, unsigned char *buf, size_t klen, int32_t *hs, int nh,
                         int64_t first_slot, bint literal, int64_t *out):
        cdef int stop
        out[0] = 0; out[1] = 0; out[2] = 0
        if self.m == 0:
            return -1
        if strategy != S_CH and nh == 0 and self.n_open == 0:
            return -1
        cdef uint32_t s = self._start_slot(buf, klen, first_slot)
        return self._walk_from(strategy, s, hs, nh, literal, out, &stop)

    cdef uint32_t _rehash_slot(self, int64_t home) noexcept nogil:
        cdef unsigned char tmp[40]
        cdef const char *prefix = b"rehash:"
        cdef int i, n
        cdef uint64_t h1, h2
        for i in range(7):
            tmp[i] = <unsigned char>prefix[i]
        n = _write_decimal(tmp + 7, <uint64_t>home)
        rjch_murmur3_x64_128(tmp, 7 + n, self.seed, &h1, &h2)
        # uniform over ring positions, like stepping to bin h(i) instead of i+1
        return self.pos[<int>(h2 % <uint64_t>self.m)]

    cdef int _route_rehash(self, unsigned char *buf, size_t klen, int32_t *hs, int nh,
                           int64_t first_slot, bint literal, int64_t *out):
        cdef uint32_t s
        cdef int i0, idx, b, rehashes = 0
        cdef int guard
        cdef int stop
        out[0] = 0; out[1] = 0; out[2] = 0
        if self.m == 0:
            return -1
        if nh == 0 and self.n_open == 0:
            return -1
        guard = self.m
        s = self._start_slot(buf, klen, first_slot)
        while True:
            i0 = self._lower_bound(s)
            idx = i0 % self.m
            b = self.own[idx]
            if literal:
                out[2] += <int64_t>self._literal_dist(s, self.pos[idx]) + 1
            else:
                out[2] += <int64_t>self._dist(s, self.pos[idx]) + 1
            if self._visit(S_CH_BL, b, hs, nh, out):
                return b
            if rehashes >= guard:
                # cycle guard: plain clockwise walk from the next slot
                s = <uint32_t>((<uint64_t>self.pos[idx] + 1) & self.mask)
                return self._walk_from(S_CH_BL, s, hs, nh, literal, out, &stop)
            rehashes += 1
            s = self._rehash_slot(self.home[b])

    cdef int _route_jump(self, unsigned char *buf, size_t klen, int32_t *hs, int nh,
                         int64_t first_slot, int64_t *out):
        cdef uint32_t w[4]
        cdef uint64_t attempt = 0
        cdef int r, b
        cdef uint32_t q
        cdef int64_t budget
        out[0] = 0; out[1] = 0; out[2] = 0
        if self.m == 0:
            return -1
        if nh == 0 and self.n_open == 0:
            return -1
        budget = 64 * <int64_t>self.m + 1024
        while True:
            _probe_words(buf, klen, attempt, self.seed, w)
            for r in range(4):
                if attempt == 0 and r == 0 and first_slot >= 0:
                    q = <uint32_t>first_slot
                elif self.shift >= 32:
                    q = 0
                else:
                    q = w[r] >> self.shift
                out[2] += 1
                b = self._owner(q)
                if b < 0:
                    continue
                if self._visit(S_RJ_CH, b, hs, nh, out):
                    return b
                if out[1] >= budget:
                    return -1
            attempt += 1


def idealized_merge_variance(int k, int j_max, double[::1] uniforms):
    """One trial of the equal-probability cascade process.

    Returns ``var[0..j_max]`` where ``var[j]`` is the population variance of
    the non-full bins' assignment probabilities after ``j`` bins are full.
    ``uniforms[j-1]`` picks the bin that fills at step ``j``.
    """
    if j_max > k - 1:
        raise ValueError("j_max must be <= k - 1")
    if uniforms.shape[0] < j_max:
        raise ValueError("need one uniform per step")
    out = np.zeros(j_max + 1, dtype=np.float64)
    cdef double[::1] ov = out
    p_arr = np.full(k, 1.0 / k, dtype=np.float64)
    nxt_arr = (np.arange(k, dtype=np.int32) + 1) % k
    prv_arr = (np.arange(k, dtype=np.int32) - 1) % k
    alive_arr = np.arange(k, dtype=np.int32)
    cdef double[::1] p = p_arr
    cdef int32_t[::1] nxt = nxt_arr.astype(np.int32)
    cdef int32_t[::1] prv = prv_arr.astype(np.int32)
    cdef int32_t[::1] alive = alive_arr
    cdef double sumsq = 0.0
    cdef int i, j, r, idx, succ, pre, last, remaining
    cdef double a, c
    for i in range(k):
        sumsq += p[i] * p[i]
    ov[0] = 0.0  # uniform start
    for j in range(1, j_max + 1):
        remaining = k - j + 1
        r = <int>(uniforms[j - 1] * remaining)
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
        last = alive[remaining - 1]
        alive[r] = last
        remaining -= 1
        ov[j] = sumsq / remaining - (1.0 / remaining) * (1.0 / remaining)
    return out
