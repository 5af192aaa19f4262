"""Load-balancing statistics and analytical search bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from rjch._backend import idealized_merge_variance


@dataclass
class TrialMetrics:
    load_variance: float
    full_fraction: float
    objects_until_first_full: int
    next_insert_bin_searches: float
    next_insert_slot_steps: float
    # per-insert spread over the repeated (n+1)th probes of this trial
    next_insert_bin_searches_std: float = 0.0
    next_insert_steps32: float = float("nan")
    wall_clock_next_insert_ns: float = float("nan")


# fields whose values depend on the machine, not the seed
WALL_CLOCK_FIELDS = ("wall_clock_next_insert_ns",)


@dataclass
class MetricSummary:
    mean: float
    std: float
    trials: int


@dataclass
class SweepSummary:
    """Mean/std of every TrialMetrics field for one (strategy, config) cell."""

    strategy: str
    n: int
    k: int
    epsilon: float
    virtual: int
    trials: int
    metrics: dict[str, MetricSummary] = field(default_factory=dict)

    def mean(self, name: str) -> float:
        return self.metrics[name].mean

    def std(self, name: str) -> float:
        return self.metrics[name].std


def summarize(rows: Sequence, strategy: str, n: int, k: int, epsilon: float, virtual: int) -> SweepSummary:
    """Mean and population std of every field of ``rows`` (dataclass records,
    TrialMetrics by default)."""
    out = SweepSummary(strategy, n, k, epsilon, virtual, len(rows))
    kind = type(rows[0]) if rows else TrialMetrics
    for f in fields(kind):
        vals = np.array([getattr(r, f.name) for r in rows], dtype=np.float64)
        # a field that is nan in every trial was not measured
        if len(vals) == 0 or np.isnan(vals).all():
            continue
        # sorting makes the float sum independent of trial order
        vals = np.sort(vals)
        mean = float(math.fsum(vals) / len(vals))
        std = float(np.sqrt(math.fsum((vals - mean) ** 2) / len(vals)))
        out.metrics[f.name] = MetricSummary(mean, std, len(vals))
    if kind is TrialMetrics and "objects_until_first_full" in out.metrics and n > 0:
        # saturated in every trial: no spread to report
        ff = [r.objects_until_first_full for r in rows]
        if all(v == n for v in ff):
            out.metrics["objects_until_first_full"].std = float("nan")
    return out


def load_variance(loads: Sequence[int]) -> float:
    """Population variance of bin loads."""
    if len(loads) == 0:
        raise ValueError("load_variance of an empty list")
    arr = np.asarray(loads, dtype=np.float64)
    return float(np.mean((arr - arr.mean()) ** 2))


def chbl_search_bound(epsilon: float) -> float:
    """Upper bound on expected bin searches for bounded-load CH."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon < 1:
        return 2.0 / epsilon**2
    return 1.0 + math.log(1.0 + epsilon) / (1.0 + epsilon)


def rjch_search_bound(epsilon: float) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 1.0 + 1.0 / epsilon


def worst_case_expected_searches(n: int, k: int, capacity: int) -> float:
    """Geometric mean search count with floor(n/C) bins full and uniform jumps."""
    full = n // capacity
    if full >= k:
        return math.inf
    return k / (k - full)


@dataclass
class AssignProbSeries:
    j: np.ndarray
    var_estimate: np.ndarray
    trials: int

    def growth(self) -> np.ndarray:
        """``var[j] / var[j-1]`` for j >= 1 (nan where the previous is 0)."""
        prev = self.var_estimate[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(prev > 0, self.var_estimate[1:] / prev, np.nan)


def assign_prob_variance_idealized(k: int, j_max: int, trials: int, seed: int = 0) -> AssignProbSeries:
    """Monte-Carlo of the equal-probability cascade: each step a uniformly
    random non-full bin fills and its assignment mass moves to the next
    non-full bin clockwise.  ``var_estimate[j]`` is the mean over trials of
    the cross-bin variance with ``j`` full bins.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if not 0 <= j_max <= k - 1:
        raise ValueError("j_max must lie in [0, k-1]")
    rng = np.random.default_rng(seed)
    acc = np.zeros(j_max + 1, dtype=np.float64)
    for _ in range(trials):
        acc += idealized_merge_variance(k, j_max, rng.random(j_max))
    est = np.maximum(acc / trials, 0.0)
    return AssignProbSeries(np.arange(j_max + 1), est, trials)


def assign_prob_variance_empirical(snapshots: Iterable[Iterable[Sequence[float]]], j_max: int | None = None) -> AssignProbSeries:
    """Average cross-bin variance of placement probabilities.

    ``snapshots`` yields one sequence per trial; element ``j`` of that
    sequence is the vector of open bins' placement probabilities when ``j``
    bins are full.  Trials may stop early; each j averages the trials that
    reached it.
    """
    sums: list[float] = []
    counts: list[int] = []
    n_trials = 0
    for trial in snapshots:
        n_trials += 1
        for j, probs in enumerate(trial):
            if j_max is not None and j > j_max:
                break
            p = np.asarray(probs, dtype=np.float64)
            v = float(np.mean((p - p.mean()) ** 2)) if len(p) else 0.0
            if j == len(sums):
                sums.append(0.0)
                counts.append(0)
            sums[j] += v
            counts[j] += 1
    est = np.array([s / c for s, c in zip(sums, counts)], dtype=np.float64)
    return AssignProbSeries(np.arange(len(est)), est, n_trials)
