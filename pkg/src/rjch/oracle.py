"""Exact reference computations on small instances.

Everything here works on the idealized ring: ``k`` bins with equal arcs,
so an object's first choice is uniform over bins.  The bounded clockwise
rule sends it to the first non-full bin at or after its first choice; the
random-jump rule sends it uniformly to a non-full bin.  Probabilities are
exact :class:`fractions.Fraction` values.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from rjch.errors import InstanceTooLarge

MAX_STATES = 2_000_000

State = tuple[int, ...]


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x) if isinstance(x, int) else Fraction(repr(float(x)))


@dataclass
class LoadDistribution:
    """Exact joint pmf of the bin-load vector."""

    k: int
    capacity: int
    pmf: dict[State, Fraction] = field(default_factory=dict)

    def total(self) -> Fraction:
        return sum(self.pmf.values(), Fraction(0))

    def marginal(self, i: int) -> dict[int, Fraction]:
        out: dict[int, Fraction] = {}
        for x, p in self.pmf.items():
            out[x[i]] = out.get(x[i], Fraction(0)) + p
        return out

    def mean(self, i: int) -> Fraction:
        return sum((x[i] * p for x, p in self.pmf.items()), Fraction(0))

    def variance(self, i: int) -> Fraction:
        mu = self.mean(i)
        return sum(((x[i] - mu) ** 2 * p for x, p in self.pmf.items()), Fraction(0))

    def expected_sum(self, f: Sequence) -> Fraction:
        """``sum_i E[f(X_i)]`` for ``f`` given as a table on 0..C."""
        return sum((p * sum(_frac(f[v]) for v in x) for x, p in self.pmf.items()), Fraction(0))

    def tv_distance(self, other: "LoadDistribution") -> Fraction:
        keys = set(self.pmf) | set(other.pmf)
        return sum((abs(self.pmf.get(s, Fraction(0)) - other.pmf.get(s, Fraction(0))) for s in keys),
                   Fraction(0)) / 2


# ---- placement rules -----------------------------------------------------

def _walk_targets(state: State, cap: int) -> list[int]:
    """First non-full bin at or after each start position (clockwise)."""
    k = len(state)
    out = []
    for i in range(k):
        for d in range(k):
            j = (i + d) % k
            if state[j] < cap:
                out.append(j)
                break
    return out


def _step(dist: dict[State, Fraction], cap: int, rule: str, forced: int | None = None) -> dict[State, Fraction]:
    """Place one more object under ``rule`` ('walk' or 'jump').  ``forced``
    sends the object to that bin first, with a jump if it is full."""
    out: dict[State, Fraction] = {}
    for state, p in dist.items():
        k = len(state)
        open_bins = [j for j in range(k) if state[j] < cap]
        if not open_bins:
            raise ValueError("no room for another object")
        moves: list[tuple[int, Fraction]]
        if forced is not None and state[forced] < cap:
            moves = [(forced, Fraction(1))]
        elif rule == "jump" or forced is not None:
            w = Fraction(1, len(open_bins))
            moves = [(j, w) for j in open_bins]
        else:
            w = Fraction(1, k)
            moves = [(j, w) for j in _walk_targets(state, cap)]
        for j, w in moves:
            nxt = state[:j] + (state[j] + 1,) + state[j + 1 :]
            out[nxt] = out.get(nxt, Fraction(0)) + p * w
    return out


def _check_size(k: int, cap: int) -> None:
    if (cap + 1) ** k > MAX_STATES:
        raise InstanceTooLarge(f"{(cap + 1) ** k} load vectors exceed the enumeration limit")


def exact_distribution(k: int, capacity: int, n: int, m: int, initial: State | None = None) -> LoadDistribution:
    """Joint load pmf when the first ``m`` objects use the clockwise rule and
    the remaining ``n - m`` use uniform jumps."""
    if k < 1 or capacity < 1 or n < 0:
        raise ValueError("need k >= 1, capacity >= 1, n >= 0")
    if not 0 <= m <= n:
        raise ValueError("m must lie in [0, n]")
    start = tuple(initial) if initial is not None else (0,) * k
    if len(start) != k or any(not 0 <= b <= capacity for b in start):
        raise ValueError("initial loads must be k values in [0, capacity]")
    if sum(start) + n > k * capacity:
        raise ValueError("n exceeds the total capacity")
    _check_size(k, capacity)
    dist = {start: Fraction(1)}
    for t in range(n):
        dist = _step(dist, capacity, "walk" if t < m else "jump")
    return LoadDistribution(k, capacity, dist)


def constrained_multinomial_pmf(n: int, p: Sequence, capacity: int | None) -> LoadDistribution:
    """Multinomial(n; p) conditioned on every count being at most
    ``capacity - 1``; ``capacity=None`` is the plain multinomial."""
    ps = [_frac(x) for x in p]
    k = len(ps)
    if k == 0 or any(x < 0 for x in ps) or sum(ps) == 0:
        raise ValueError("p must be a non-empty non-negative vector")
    tot = sum(ps)
    ps = [x / tot for x in ps]
    top = n if capacity is None else capacity - 1
    if top < 0 or n > k * top:
        raise ValueError("empty support: n exceeds k*(capacity-1)")
    _check_size(k, top)
    pmf: dict[State, Fraction] = {}
    for x in _compositions(n, k, top):
        w = Fraction(math.factorial(n))
        for xi, pi in zip(x, ps):
            w = w / math.factorial(xi) * pi**xi
        if w:
            pmf[x] = w
    z = sum(pmf.values(), Fraction(0))
    if z == 0:
        raise ValueError("empty support")
    return LoadDistribution(k, top + 1, {x: w / z for x, w in pmf.items()})


def _compositions(n: int, k: int, top: int) -> Iterable[State]:
    if k == 1:
        if n <= top:
            yield (n,)
        return
    for first in range(min(n, top) + 1):
        for rest in _compositions(n - first, k - 1, top):
            yield (first,) + rest


# ---- checks ----------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    instance: dict
    passed: bool
    value: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(name=self.name, instance=self.instance, passed=self.passed, value=self.value,
                    detail=self.detail)


def is_convex(f: Sequence) -> bool:
    v = [_frac(x) for x in f]
    return all(v[i + 1] - 2 * v[i] + v[i - 1] >= 0 for i in range(1, len(v) - 1))


@dataclass
class DominanceResult:
    passed: bool
    margin: Fraction
    monotone: bool
    # sum_i E f(X_i) for m = 0..n
    values: list[Fraction]


def check_convex_dominance(k: int, capacity: int, n: int, f: Sequence) -> DominanceResult:
    """Compare ``sum_i E f(X_i)`` between all-jump (m=0) and all-clockwise
    (m=n) placement, and check it never decreases as m grows."""
    if len(f) != capacity + 1:
        raise ValueError("f must be tabulated on 0..capacity")
    if not is_convex(f):
        raise ValueError("f is not convex")
    values = [exact_distribution(k, capacity, n, m).expected_sum(f) for m in range(n + 1)]
    monotone = all(a <= b for a, b in zip(values, values[1:]))
    margin = values[-1] - values[0]
    return DominanceResult(margin >= 0 and monotone, margin, monotone, values)


def lemma1_scheme(K: int, capacity: int, b: State, N: int, m: int) -> LoadDistribution:
    """N objects by uniform jumps on top of loads ``b``, except that object
    ``m`` (1-based) goes to bin 0 first and jumps only if bin 0 is full."""
    dist = {tuple(b): Fraction(1)}
    for t in range(1, N + 1):
        dist = _step(dist, capacity, "jump", forced=0 if t == m else None)
    return LoadDistribution(K, capacity, dist)


def check_lemma1_invariance(K: int, capacity: int, b: Sequence[int], N: int) -> Fraction:
    """Largest total-variation distance between the schemes m = 1..N."""
    b = tuple(int(x) for x in b)
    if len(b) != K or any(not 0 <= x <= capacity for x in b):
        raise ValueError("b must hold K loads in [0, capacity]")
    if sum(b) + N > K * capacity:
        raise ValueError("N objects do not fit")
    _check_size(K, capacity)
    dists = [lemma1_scheme(K, capacity, b, N, m) for m in range(1, N + 1)]
    worst = Fraction(0)
    for a, c in itertools.combinations(dists, 2):
        worst = max(worst, a.tv_distance(c))
    return worst


def check_lemma2_closure(n: int, p: Sequence, capacity: int | None, subset: Sequence[int]) -> Fraction:
    """Largest absolute gap between the conditional law of the ``subset``
    counts given their sum, and the (constrained) multinomial with
    renormalized probabilities, over every reachable sum."""
    full = constrained_multinomial_pmf(n, p, capacity)
    ps = [_frac(x) for x in p]
    sub = list(subset)
    psub = [ps[i] for i in sub]
    by_sum: dict[int, dict[State, Fraction]] = {}
    for x, w in full.pmf.items():
        xs = tuple(x[i] for i in sub)
        d = by_sum.setdefault(sum(xs), {})
        d[xs] = d.get(xs, Fraction(0)) + w
    worst = Fraction(0)
    for s, d in by_sum.items():
        z = sum(d.values(), Fraction(0))
        if sum(psub) == 0:
            continue
        ref = constrained_multinomial_pmf(s, psub, capacity)
        for xs in set(d) | set(ref.pmf):
            worst = max(worst, abs(d.get(xs, Fraction(0)) / z - ref.pmf.get(xs, Fraction(0))))
    return worst


def poisson_binomial_pmf(p: Sequence) -> list[Fraction]:
    pmf = [Fraction(1)]
    for pi in (_frac(x) for x in p):
        nxt = [Fraction(0)] * (len(pmf) + 1)
        for s, w in enumerate(pmf):
            nxt[s] += w * (1 - pi)
            nxt[s + 1] += w * pi
        pmf = nxt
    return pmf


@dataclass
class PoissonBinomialResult:
    passed: bool
    violation: str = ""


def check_poisson_binomial_dominance(p: Sequence, capacity: int) -> PoissonBinomialResult:
    """For independent Bernoulli(p_i) with every p_i <= 1/2, let xi1 be their
    sum and xi2 = n - xi1.  Checks the pointwise inequalities for
    x >= n/2, the same inequalities conditioned on both sums being below
    ``capacity``, and the resulting stochastic order."""
    ps = [_frac(x) for x in p]
    if any(x < 0 or x > Fraction(1, 2) for x in ps):
        raise ValueError("every p_i must lie in [0, 1/2]")
    n = len(ps)
    if n > 20:
        raise InstanceTooLarge("at most 20 variables")
    f1 = poisson_binomial_pmf(ps)
    f2 = f1[::-1]
    for x in range(n + 1):
        if 2 * x < n:
            continue
        if f1[x] > f2[x]:
            return PoissonBinomialResult(False, f"P(xi1={x}) > P(xi2={x})")
        if f1[n - x] < f2[n - x]:
            return PoissonBinomialResult(False, f"P(xi1={n - x}) < P(xi2={n - x})")
    cond = [x for x in range(n + 1) if x < capacity and n - x < capacity]
    z = sum((f1[x] for x in cond), Fraction(0))
    if z > 0:
        for x in cond:
            if 2 * x >= n and f1[x] / z > f2[x] / z:
                return PoissonBinomialResult(False, f"conditional P(xi1={x}) > P(xi2={x})")
        for t in range(n + 1):
            if sum((f1[x] for x in cond if x > t), Fraction(0)) > sum((f2[x] for x in cond if x > t), Fraction(0)):
                return PoissonBinomialResult(False, f"conditional tail order fails at {t}")
    for t in range(n + 1):
        if sum(f1[t + 1 :], Fraction(0)) > sum(f2[t + 1 :], Fraction(0)):
            return PoissonBinomialResult(False, f"tail order fails at {t}")
    return PoissonBinomialResult(True)


def cluster_lengths(loads: Sequence[int], capacity: int) -> dict[int, int]:
    """For each non-full bin, the number of consecutive full bins just
    before it; objects whose first choice lands there overflow into it."""
    k = len(loads)
    out = {}
    for j in range(k):
        if loads[j] >= capacity:
            continue
        L = 0
        while L < k - 1 and loads[(j - 1 - L) % k] >= capacity:
            L += 1
        out[j] = L
    return out


def next_placement_probs(loads: Sequence[int], capacity: int) -> dict[int, Fraction]:
    """Exact clockwise-rule probability ``(L_j + 1)/k`` of each non-full bin."""
    k = len(loads)
    return {j: Fraction(L + 1, k) for j, L in cluster_lengths(loads, capacity).items()}


def check_lemma4_proportionality(loads: Sequence[int], capacity: int, trials: int = 100_000,
                                 seed: int = 0) -> float:
    """Chi-square p-value of simulated next placements on a frozen state
    against the ``(L_j + 1)/k`` proportions."""
    from scipy.stats import chisquare

    loads = list(loads)
    k = len(loads)
    target = np.array(_walk_targets(tuple(loads), capacity), dtype=np.int64)
    rng = np.random.default_rng(seed)
    counts = np.bincount(target[rng.integers(0, k, size=trials)], minlength=k)
    probs = next_placement_probs(loads, capacity)
    bins = sorted(probs)
    if len(bins) == 1:
        return 1.0 if counts[bins[0]] == trials else 0.0
    obs = counts[bins].astype(np.float64)
    exp = np.array([float(probs[j]) for j in bins]) * trials
    return float(chisquare(obs, exp).pvalue)


def check_lemma4_conditional(k: int, capacity: int, n: int) -> Fraction:
    """Largest gap between the exact law of the non-full loads, given which
    bins are full and their total, and the constrained multinomial with
    probabilities proportional to ``L_j + 1``."""
    dist = exact_distribution(k, capacity, n, n)
    groups: dict[tuple, dict[State, Fraction]] = {}
    for x, p in dist.pmf.items():
        full = tuple(v >= capacity for v in x)
        if all(full):
            continue
        xs = tuple(v for v in x if v < capacity)
        d = groups.setdefault(full, {})
        d[xs] = d.get(xs, Fraction(0)) + p
    worst = Fraction(0)
    for full, d in groups.items():
        loads = [capacity if f else 0 for f in full]
        probs = next_placement_probs(loads, capacity)
        ps = [probs[j] for j in sorted(probs)]
        z = sum(d.values(), Fraction(0))
        n_star = n - capacity * sum(full)
        ref = constrained_multinomial_pmf(n_star, ps, capacity)
        for xs in set(d) | set(ref.pmf):
            worst = max(worst, abs(d.get(xs, Fraction(0)) / z - ref.pmf.get(xs, Fraction(0))))
    return worst


# ---- frozen states for the proportionality test ----------------------------

def frozen_states(count: int = 10, seed: int = 0) -> list[tuple[list[int], int]]:
    """Clockwise-rule fills on small idealized rings, plus the edge cases:
    no full bins, one full bin between open ones, and all but one full."""
    states: list[tuple[list[int], int]] = [
        ([0] * 8, 3),
        ([1, 3, 1, 0, 2, 0, 1, 2], 3),
        ([3, 3, 3, 3, 1, 3, 3, 3], 3),
    ]
    rng = np.random.default_rng(seed)
    while len(states) < count:
        k = int(rng.integers(6, 21))
        cap = int(rng.integers(2, 6))
        loads = [0] * k
        for _ in range(int(rng.integers(k, k * cap))):
            j = _walk_targets(tuple(loads), cap)[int(rng.integers(k))]
            loads[j] += 1
        if any(v < cap for v in loads):
            states.append((loads, cap))
    return states[:count]


# ---- suite ------------------------------------------------------------------

CONVEX_FUNCTIONS: dict[str, Callable[[int, int], Fraction]] = {
    "x": lambda x, c: Fraction(x),
    "x^2": lambda x, c: Fraction(x * x),
    "x^3": lambda x, c: Fraction(x**3),
    "full": lambda x, c: Fraction(int(x == c)),
}

SUITES = ("lemmas", "dominance", "bounds", "all")


def _lemma_checks(max_k: int, max_n: int, seed: int) -> list[CheckResult]:
    out: list[CheckResult] = []
    tol = Fraction(1, 10**12)
    # invariance of the late-forced object
    for K in range(1, min(max_k, 4) + 1):
        for C in range(1, 4):
            for b in itertools.product(range(C), repeat=K):
                for N in range(1, min(max_n, 6) + 1):
                    if sum(b) + N > K * C:
                        continue
                    d = check_lemma1_invariance(K, C, b, N)
                    out.append(CheckResult("lemma1_invariance", dict(K=K, C=C, b=list(b), N=N), d < tol, float(d)))
    # conditional closure of (constrained) multinomials
    rng = np.random.default_rng(seed)
    for k in range(2, min(max_k, 4) + 1):
        for C in (None, 2, 3):
            for n in range(0, min(max_n, 6) + 1):
                if C is not None and n > k * (C - 1):
                    continue
                p = [Fraction(int(v), 20) for v in rng.integers(1, 10, size=k)]
                for size in range(1, k):
                    for sub in itertools.combinations(range(k), size):
                        d = check_lemma2_closure(n, p, C, sub)
                        out.append(CheckResult("lemma2_closure", dict(n=n, p=[str(x) for x in p], C=C, subset=list(sub)),
                                               d < tol, float(d)))
    # Poisson-binomial dominance on random vectors
    for i in range(50):
        n = int(rng.integers(1, 16))
        p = [Fraction(int(v), 1000) for v in rng.integers(0, 501, size=n)]
        C = int(rng.integers(1, n + 2))
        r = check_poisson_binomial_dominance(p, C)
        out.append(CheckResult("lemma3_poisson_binomial", dict(n=n, C=C, p=[str(x) for x in p]), r.passed,
                               None, r.violation))
    # next-placement proportionality on frozen states
    for i, (loads, cap) in enumerate(frozen_states(10, seed)):
        pv = check_lemma4_proportionality(loads, cap, seed=seed + i)
        out.append(CheckResult("lemma4_proportionality", dict(loads=loads, C=cap), pv > 0.001, pv))
    return out


def _dominance_checks(max_k: int, max_n: int) -> list[CheckResult]:
    out: list[CheckResult] = []
    for k in range(1, min(max_k, 4) + 1):
        for C in range(1, 4):
            for n in range(0, min(max_n, k * C) + 1):
                for name, fn in CONVEX_FUNCTIONS.items():
                    f = [fn(x, C) for x in range(C + 1)]
                    r = check_convex_dominance(k, C, n, f)
                    out.append(CheckResult("convex_dominance", dict(k=k, C=C, n=n, f=name), r.margin >= 0,
                                           float(r.margin)))
                    out.append(CheckResult("m_monotone", dict(k=k, C=C, n=n, f=name), r.monotone,
                                           float(r.margin)))
    return out


def _bound_checks() -> list[CheckResult]:
    from rjch.metrics import chbl_search_bound, rjch_search_bound

    out: list[CheckResult] = []
    grid = [round(0.05 * i, 2) for i in range(1, 19)] + [8.0, 10.0, 20.0, 50.0]
    for eps in grid:
        r, c = rjch_search_bound(eps), chbl_search_bound(eps)
        out.append(CheckResult("bound_order", dict(epsilon=eps, rjch=r, chbl=c), r < c, c - r))
    # the geometric argument: floor(n/C) full bins, uniform jumps
    from rjch.metrics import worst_case_expected_searches
    from rjch.ring import capacity_for

    for eps in (0.1, 0.3, 1.0, 3.0):
        C = capacity_for(10000, 1000, eps)
        g = worst_case_expected_searches(10000, 1000, C)
        out.append(CheckResult("geometric_within_bound", dict(epsilon=eps, C=C, expected=g),
                               g <= rjch_search_bound(eps) + 1e-12, rjch_search_bound(eps) - g))
    return out


def run_suite(suite: str = "all", max_k: int = 4, max_n: int = 12, seed: int = 0) -> list[CheckResult]:
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}")
    out: list[CheckResult] = []
    if suite in ("lemmas", "all"):
        out += _lemma_checks(max_k, max_n, seed)
    if suite in ("dominance", "all"):
        out += _dominance_checks(max_k, max_n)
    if suite in ("bounds", "all"):
        out += _bound_checks()
    return out
