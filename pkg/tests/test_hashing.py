import numpy as np
import pytest
from scipy.stats import chisquare

from rjch.hashing import (ProbeKey, bias_hit, biased_digest, check_bits, digest, fold_seed,
                          probe_slots, slots_from_digest)
from rjch.errors import ConfigurationError


def test_digest_deterministic():
    assert digest(7, b"x") == digest(7, b"x")


def test_digest_differs_on_input_and_seed():
    assert digest(7, b"x") != digest(7, b"y")
    assert digest(7, b"x") != digest(8, b"x")


def test_words_concatenate_to_value():
    d = digest(3, b"hello")
    w = d.words()
    assert len(w) == 4 and all(0 <= x < 2**32 for x in w)
    assert (w[0] << 96) | (w[1] << 64) | (w[2] << 32) | w[3] == d.value


def test_fold_seed():
    assert fold_seed(0) == 0
    assert fold_seed(5) == 5
    assert fold_seed(1 << 32) == 1
    assert fold_seed((1 << 64) - 1) == 0


def test_check_bits_range():
    assert check_bits(1) == 1 and check_bits(32) == 32
    for bad in (0, 33, -1):
        with pytest.raises(ConfigurationError):
            check_bits(bad)


def test_probe_slots_deterministic_and_in_range():
    k = ProbeKey(b"3:abc", 0)
    assert probe_slots(k) == probe_slots(k)
    for i in range(200):
        assert all(0 <= s < 2**20 for s in probe_slots(ProbeKey(b"key%d" % i, i % 3), 20))


def test_probe_key_encoding():
    assert ProbeKey(b"k", 12).encode() == b"k12"
    with pytest.raises(ValueError):
        ProbeKey(b"k", -1).encode()


def test_slot_uniformity_chi_square():
    # 10^6 keys, top 20 bits, folded into 2^10 buckets
    counts = np.zeros(1024, dtype=np.int64)
    for i in range(250_000):
        for s in slots_from_digest(digest(11, b"u%d" % i), 20):
            counts[s >> 10] += 1
    assert counts.sum() == 10**6
    assert chisquare(counts).pvalue > 0.001


def test_attempts_give_fresh_slots():
    # slot collision rate between attempt 0 and 1 should be about 2^-A
    same = 0
    trials = 100_000
    for i in range(trials):
        a = probe_slots(ProbeKey(b"k%d" % i, 0), 20)
        b = probe_slots(ProbeKey(b"k%d" % i, 1), 20)
        same += a[0] == b[0]
    # expected 0.095 collisions; allow a generous Poisson upper tail
    assert same <= 5


def test_bias_degenerate():
    for i in range(500):
        data = b"o%d" % i
        assert biased_digest(1, data, 99, 0.0) == digest(1, data)
        assert slots_from_digest(biased_digest(1, data, 99, 1.0), 20)[0] == 99


def test_bias_frequency():
    n = 100_000
    hits = sum(bias_hit(5, b"o%d" % i, 0.9) for i in range(n))
    assert 0.89 <= hits / n <= 0.91


def test_bias_rejects_bad_args():
    with pytest.raises(ValueError):
        bias_hit(0, b"x", 1.5)
    with pytest.raises(ValueError):
        biased_digest(0, b"x", 2**20, 0.5, 20)
