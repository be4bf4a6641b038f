"""Permutation sampling, per-epoch orderings and without-replacement statistics.

Randomness comes from a counter-based Philox generator keyed by the run seed.
Each epoch reads from its own disjoint counter block, so any epoch's ordering
can be regenerated without replaying the previous ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

SCHEMES = ("RR", "SO", "IG", "SGD-iid", "SGD-window")
MAX_ENUMERATION_N = 8


class RngStream:
    """Deterministic generator factory for one run.

    ``generator(block)`` returns a fresh Philox generator whose counter starts
    at ``block << 192``; blocks are far apart, so streams never overlap. Block
    0 is reserved for run setup (e.g. the Shuffle-Once permutation) and epoch
    ``t`` reads block ``t + 1``.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self._bitgen = np.random.Philox(key=self.seed)
        self._state = self._bitgen.state

    def generator(self, block: int) -> np.random.Generator:
        """Generator positioned at ``block``.

        The stream reuses one bit generator, so a generator returned earlier
        by the same stream must not be used after this call.
        """
        st = dict(self._state)
        st["state"] = {
            "counter": np.array([0, 0, 0, int(block)], dtype=np.uint64),
            "key": self._state["state"]["key"],
        }
        self._bitgen.state = st
        return np.random.Generator(self._bitgen)

    def setup(self) -> np.random.Generator:
        return self.generator(0)

    def epoch(self, t: int) -> np.random.Generator:
        return self.generator(t + 1)


def is_permutation(order, n: Optional[int] = None) -> bool:
    order = np.asarray(order)
    if order.ndim != 1 or (n is not None and order.size != n):
        return False
    return bool(np.array_equal(np.sort(order), np.arange(order.size)))


def sample_permutation(rng, n: int) -> np.ndarray:
    """Uniform random permutation of ``range(n)``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed. The shuffle is
    Fisher-Yates as implemented by ``Generator.permutation``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = RngStream(int(rng)).setup()
    return rng.permutation(n)


@dataclass(frozen=True)
class OrderingScheme:
    kind: str
    base: Optional[tuple] = None
    window_tau: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")
        if self.kind == "SO" and self.base is None:
            raise ValueError("SO requires a base permutation")
        if self.base is not None:
            object.__setattr__(self, "base", tuple(int(i) for i in self.base))
            if not is_permutation(self.base):
                raise ValueError("base must be a permutation")
        if self.kind == "SGD-window" and not (self.window_tau and self.window_tau >= 1):
            raise ValueError("SGD-window requires window_tau >= 1")

    @classmethod
    def rr(cls):
        return cls("RR")

    @classmethod
    def so(cls, base):
        return cls("SO", base=tuple(base))

    @classmethod
    def ig(cls, base=None):
        return cls("IG", base=None if base is None else tuple(base))

    @classmethod
    def sgd(cls):
        return cls("SGD-iid")


def epoch_ordering(scheme: OrderingScheme, t: int, rng: np.random.Generator, n: int) -> np.ndarray:
    """Indices of the ``n`` steps taken in epoch ``t``.

    RR draws a fresh permutation, SO and IG replay their base order (IG
    defaults to the identity), SGD-iid draws with replacement and SGD-window
    walks ``n`` consecutive indices (mod ``n``) from one uniform start.
    """
    kind = scheme.kind
    if kind == "RR":
        return sample_permutation(rng, n)
    if kind in ("SO", "IG"):
        if scheme.base is None:
            if kind == "SO":
                raise ValueError("SO requires a base permutation")
            return np.arange(n)
        if len(scheme.base) != n:
            raise ValueError(f"base permutation has length {len(scheme.base)}, expected {n}")
        return np.array(scheme.base)
    if kind == "SGD-iid":
        return rng.integers(0, n, size=n)
    start = int(rng.integers(0, n))
    return (start + np.arange(n)) % n


# ---------------------------------------------------------------------------
# sampling without replacement


@dataclass(frozen=True)
class WorMoments:
    predicted_variance: float
    mean: np.ndarray
    population_variance: float


def wor_mean_and_variance(X, k: int) -> WorMoments:
    """Moments of the mean of ``k`` vectors drawn without replacement from ``X``.

    The expected sample mean is the population mean and the expected squared
    deviation is ``(n - k) / (k (n - 1)) * sigma^2``, with ``sigma^2`` the
    population variance.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two vectors")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    mean = X.mean(axis=0)
    sigma2 = float(np.mean(np.sum((X - mean) ** 2, axis=1)))
    return WorMoments((n - k) / (k * (n - 1)) * sigma2, mean, sigma2)


def all_permutations(n: int) -> np.ndarray:
    if n > MAX_ENUMERATION_N:
        raise ValueError(f"enumeration capped at n={MAX_ENUMERATION_N}, got {n}")
    if n < 1:
        raise ValueError("n must be positive")
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp)


def enumerate_permutation_expectation(n: int, functional: Callable[[np.ndarray], float]):
    """Exact mean of ``functional`` over all ``n!`` permutations (``n <= 8``).

    Works for scalar or array-valued functionals; the sum is accumulated in
    lexicographic permutation order.
    """
    perms = all_permutations(n)
    total = None
    for p in perms:
        v = np.asarray(functional(p), dtype=float)
        total = v if total is None else total + v
    out = total / len(perms)
    return float(out) if out.ndim == 0 else out


def first_k_mean_sq_deviation(X, k: int) -> Callable[[np.ndarray], float]:
    """Functional ``pi -> ||mean(X[pi[:k]]) - mean(X)||^2`` for enumeration."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mean = X.mean(axis=0)

    def f(pi):
        r = X[np.asarray(pi)[:k]].mean(axis=0) - mean
        return float(r @ r)

    return f
