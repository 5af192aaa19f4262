import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from rjch.errors import InstanceTooLarge
from rjch.oracle import (CONVEX_FUNCTIONS, check_convex_dominance, check_lemma1_invariance,
                         check_lemma2_closure, check_lemma4_conditional, check_lemma4_proportionality,
                         check_poisson_binomial_dominance, cluster_lengths, constrained_multinomial_pmf,
                         exact_distribution, frozen_states, is_convex, next_placement_probs,
                         poisson_binomial_pmf, run_suite)


def _simulate(k, C, n, m, trials, seed):
    """Monte-Carlo replay: the first m objects walk clockwise from a uniform
    bin, the rest jump uniformly among non-full bins."""
    rng = np.random.default_rng(seed)
    counts = Counter()
    for _ in range(trials):
        loads = [0] * k
        for t in range(n):
            if t < m:
                i = int(rng.integers(k))
                while loads[i] >= C:
                    i = (i + 1) % k
            else:
                open_ = [j for j in range(k) if loads[j] < C]
                i = open_[int(rng.integers(len(open_)))]
            loads[i] += 1
        counts[tuple(loads)] += 1
    return counts


@pytest.mark.parametrize("m", [0, 2, 5])
def test_exact_distribution_matches_monte_carlo(m):
    dist = exact_distribution(3, 2, 5, m)
    assert dist.total() == 1
    trials = 20_000
    emp = _simulate(3, 2, 5, m, trials, seed=m)
    for x, p in dist.pmf.items():
        assert abs(emp[x] / trials - float(p)) < 5 * np.sqrt(float(p) * (1 - float(p)) / trials) + 1e-9
    assert set(emp) <= set(dist.pmf)


def test_forced_outcome():
    for m in (0, 1, 2):
        assert exact_distribution(2, 1, 2, m).pmf == {(1, 1): 1}


def test_symmetric_marginal_mean():
    d = exact_distribution(3, 2, 4, 0)
    assert all(d.mean(i) == Fraction(4, 3) for i in range(3))


def test_walk_variance_exceeds_jump_variance():
    walk, jump = exact_distribution(3, 2, 5, 5), exact_distribution(3, 2, 5, 0)
    assert walk.variance(0) >= jump.variance(0)


def test_instance_size_guard():
    with pytest.raises(InstanceTooLarge):
        exact_distribution(40, 40, 10, 0)


def test_constrained_multinomial():
    # an inactive constraint leaves the plain multinomial
    plain = constrained_multinomial_pmf(3, [Fraction(1, 3), Fraction(2, 3)], None)
    wide = constrained_multinomial_pmf(3, [Fraction(1, 3), Fraction(2, 3)], 10)
    assert plain.pmf == wide.pmf
    assert plain.pmf[(0, 3)] == Fraction(8, 27)
    forced = constrained_multinomial_pmf(2, [Fraction(1, 2)] * 2, 2)
    assert forced.pmf == {(1, 1): 1}
    with pytest.raises(ValueError):
        constrained_multinomial_pmf(5, [Fraction(1, 2)] * 2, 2)


def test_is_convex():
    assert is_convex([0, 1, 4, 9])
    assert not is_convex([0, 2, 3])


def test_dominance_examples():
    C = 2
    r = check_convex_dominance(3, C, 5, [0, 1, 2])
    assert r.margin == 0 and r.passed
    assert all(v == 5 for v in r.values)
    full = check_convex_dominance(3, C, 5, [0, 0, 1])
    assert full.passed
    sq = check_convex_dominance(3, C, 5, [0, 1, 4])
    # three bins of capacity 2 holding 5 objects always load as {2, 2, 1}
    assert sq.margin == 0
    strict = check_convex_dominance(3, 3, 5, [0, 1, 4, 9])
    assert strict.passed and strict.margin > 0


def test_dominance_all_small_instances():
    for k, C in itertools.product(range(1, 4), range(1, 4)):
        for n in range(k * C + 1):
            for name, fn in CONVEX_FUNCTIONS.items():
                r = check_convex_dominance(k, C, n, [fn(x, C) for x in range(C + 1)])
                assert r.passed, (k, C, n, name)


def test_lemma1_examples():
    assert check_lemma1_invariance(3, 2, (0, 0, 0), 1) == 0
    assert check_lemma1_invariance(3, 2, (1, 0, 0), 3) < Fraction(1, 10**12)
    assert check_lemma1_invariance(2, 1, (0, 0), 1) == 0


def test_lemma2_closure():
    p = [Fraction(1, 5), Fraction(3, 10), Fraction(1, 2)]
    assert check_lemma2_closure(4, p, None, [0, 1]) == 0
    assert check_lemma2_closure(4, p, 3, [0, 2]) == 0


def test_poisson_binomial():
    assert poisson_binomial_pmf([Fraction(1, 2)] * 2) == [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)]
    assert check_poisson_binomial_dominance([Fraction(1, 2)] * 4, 3).passed
    assert check_poisson_binomial_dominance([0.2, 0.3, 0.4], 3).passed
    pb = poisson_binomial_pmf([Fraction(1, 10)])
    assert pb[1] == Fraction(1, 10) and pb[0] == Fraction(9, 10)
    assert check_poisson_binomial_dominance([Fraction(1, 10)], 2).passed


def test_cluster_lengths_and_probabilities():
    loads = [1, 3, 1, 3, 3, 0]
    assert cluster_lengths(loads, 3) == {0: 0, 2: 1, 5: 2}
    probs = next_placement_probs(loads, 3)
    assert sum(probs.values()) == 1
    assert probs == {0: Fraction(1, 6), 2: Fraction(2, 6), 5: Fraction(3, 6)}
    assert next_placement_probs([0] * 4, 3) == {i: Fraction(1, 4) for i in range(4)}
    assert next_placement_probs([3, 3, 1, 3], 3) == {2: 1}


def test_lemma4_proportionality_on_frozen_states():
    for i, (loads, cap) in enumerate(frozen_states(10, 0)):
        assert check_lemma4_proportionality(loads, cap, seed=i) > 0.001


def test_lemma4_exact_conditional_gap_is_real():
    # the exact conditional law departs from the constrained multinomial here
    assert check_lemma4_conditional(3, 3, 6) > Fraction(1, 10)


@pytest.mark.parametrize("suite", ["lemmas", "dominance", "bounds"])
def test_suites_pass(suite):
    res = run_suite(suite, max_k=3, max_n=6)
    assert res and all(r.passed for r in res)


def test_degenerate_suite():
    res = run_suite("all", max_k=1, max_n=2)
    assert all(r.passed for r in res)
    with pytest.raises(ValueError):
        run_suite("nope")
