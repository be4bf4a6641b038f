import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reshuffle.shuffle import (
    OrderingScheme,
    RngStream,
    all_permutations,
    enumerate_permutation_expectation,
    epoch_ordering,
    first_k_mean_sq_deviation,
    is_permutation,
    sample_permutation,
    wor_mean_and_variance,
)


def test_sample_permutation_basics():
    assert sample_permutation(0, 1).tolist() == [0]
    assert sample_permutation(7, 9).tolist() == sample_permutation(7, 9).tolist()
    with pytest.raises(ValueError):
        sample_permutation(0, 0)


def test_sample_permutation_uniform():
    rng = RngStream(123).setup()
    counts = {}
    draws = 60000
    for _ in range(draws):
        p = tuple(sample_permutation(rng, 3))
        counts[p] = counts.get(p, 0) + 1
    assert len(counts) == 6
    se = np.sqrt(draws * (1 / 6) * (5 / 6))
    for c in counts.values():
        assert abs(c - draws / 6) <= 3 * se


def test_stream_blocks_are_independent_of_order():
    s = RngStream(4)
    later = s.epoch(5).permutation(10)
    s.epoch(0).permutation(10)
    assert np.array_equal(RngStream(4).epoch(5).permutation(10), later)
    assert not np.array_equal(s.epoch(1).permutation(50), s.epoch(2).permutation(50))


def test_epoch_ordering_examples():
    so = OrderingScheme.so((2, 0, 1))
    ig = OrderingScheme.ig()
    for t in range(4):
        rng = RngStream(1).epoch(t)
        assert epoch_ordering(so, t, rng, 3).tolist() == [2, 0, 1]
        assert epoch_ordering(ig, t, rng, 4).tolist() == [0, 1, 2, 3]
    rng = RngStream(2).epoch(0)
    assert is_permutation(epoch_ordering(OrderingScheme.rr(), 0, rng, 6), 6)
    win = epoch_ordering(OrderingScheme("SGD-window", window_tau=1), 0, rng, 5)
    assert np.array_equal(np.diff(win) % 5, np.ones(4))
    iid = epoch_ordering(OrderingScheme.sgd(), 0, rng, 5)
    assert iid.shape == (5,) and iid.min() >= 0 and iid.max() < 5


def test_rr_collision_frequency():
    n, trials = 3, 6000
    same = sum(
        np.array_equal(epoch_ordering(OrderingScheme.rr(), 0, RngStream(s).epoch(0), n),
                       epoch_ordering(OrderingScheme.rr(), 1, RngStream(s).epoch(1), n))
        for s in range(trials)
    )
    p = 1 / 6
    assert abs(same / trials - p) <= 4 * np.sqrt(p * (1 - p) / trials)


def test_scheme_validation():
    with pytest.raises(ValueError):
        OrderingScheme("SO")
    with pytest.raises(ValueError):
        OrderingScheme("SGD-window")
    with pytest.raises(ValueError):
        OrderingScheme("XX")
    with pytest.raises(ValueError):
        OrderingScheme.so((0, 0, 1))


def test_wor_examples():
    assert wor_mean_and_variance([0, 3, 6], 2).predicted_variance == 1.5
    X = np.random.default_rng(0).standard_normal((5, 2))
    m = wor_mean_and_variance(X, 5)
    assert m.predicted_variance == 0
    m1 = wor_mean_and_variance(X, 1)
    assert m1.predicted_variance == pytest.approx(m1.population_variance, rel=1e-15)
    with pytest.raises(ValueError):
        wor_mean_and_variance(X, 0)
    with pytest.raises(ValueError):
        wor_mean_and_variance(X, 6)


def test_enumeration_examples():
    assert enumerate_permutation_expectation(4, lambda p: 2.5) == 2.5
    assert enumerate_permutation_expectation(3, first_k_mean_sq_deviation([0, 3, 6], 2)) == pytest.approx(1.5, abs=1e-15)
    assert enumerate_permutation_expectation(2, lambda p: float(tuple(p) == (0, 1))) == 0.5
    with pytest.raises(ValueError):
        enumerate_permutation_expectation(9, lambda p: 0.0)
    assert len(all_permutations(5)) == 120


def _brute_pairs(X, k):
    # unordered k-subsets are an independent oracle to ordered enumeration
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    mean = X.mean(axis=0)
    vals = [np.sum((X[list(c)].mean(axis=0) - mean) ** 2) for c in itertools.combinations(range(len(X)), k)]
    return float(np.mean(vals))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10_000))
def test_without_replacement_closed_form(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    for k in range(1, n + 1):
        closed = wor_mean_and_variance(X, k).predicted_variance
        exact = enumerate_permutation_expectation(n, first_k_mean_sq_deviation(X, k))
        assert abs(closed - exact) <= 1e-10
        assert abs(closed - _brute_pairs(X, k)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_mean_unbiased_and_covariance(n, seed):
    X = np.random.default_rng(seed).standard_normal((n, 2))
    mean = X.mean(axis=0)
    sigma2 = np.mean(np.sum((X - mean) ** 2, axis=1))
    for k in range(1, n + 1):
        m = enumerate_permutation_expectation(n, lambda p: X[p[:k]].mean(axis=0))
        assert np.allclose(m, mean, atol=1e-12)
    cov = enumerate_permutation_expectation(n, lambda p: float((X[p[0]] - mean) @ (X[p[1]] - mean)))
    assert cov == pytest.approx(-sigma2 / (n - 1), abs=1e-12)
