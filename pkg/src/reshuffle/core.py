"""Finite-sum problem oracles.

Every problem is a mean of ``n`` components. A component is a group of one or
more samples (a minibatch); the component loss is the mean sample loss over
the group. Ungrouped problems use singleton groups, so ``n`` equals the sample
count.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

CONVEXITY_CLASSES = (
    "each-strongly-convex",
    "f-strongly-convex",
    "convex",
    "nonconvex",
    "pl",
)


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap before its tolerance."""


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    mu: float = 0.0
    convexity_class: str = "nonconvex"
    pl_mu: Optional[float] = None
    # logistic problems also report the two ingredients of L
    L_f: Optional[float] = None
    L_max: Optional[float] = None

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.mu > self.L * (1 + 1e-12):
            raise ValueError(f"mu={self.mu} exceeds L={self.L}")
        if self.convexity_class not in CONVEXITY_CLASSES:
            raise ValueError(f"unknown convexity class {self.convexity_class!r}")
        if self.pl_mu is not None and not self.pl_mu > 0:
            raise ValueError("pl_mu must be positive when given")

    @property
    def kappa(self) -> Optional[float]:
        m = self.strong_convexity
        return self.L / m if m else None

    @property
    def strong_convexity(self) -> float:
        """The constant that plays the role of mu in the bounds (PL constant for PL problems)."""
        if self.mu > 0:
            return self.mu
        return self.pl_mu or 0.0


def as_vector(x, d: Optional[int] = None) -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if v.size < 1:
        raise ValueError("vector must have at least one coordinate")
    if d is not None and v.size != d:
        raise ValueError(f"expected dimension {d}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite coordinates")
    return v


def singleton_groups(N: int) -> list[np.ndarray]:
    return [np.array([j]) for j in range(N)]


def _check_groups(groups, N: int) -> list[np.ndarray]:
    groups = [np.asarray(g, dtype=np.intp).reshape(-1) for g in groups]
    if not groups or any(g.size == 0 for g in groups):
        raise ValueError("groups must be nonempty")
    flat = np.concatenate(groups)
    if flat.size != N or not np.array_equal(np.sort(flat), np.arange(N)):
        raise ValueError("groups must partition the samples")
    return groups


class Problem:
    """Base finite-sum oracle ``f(x) = (1/n) sum_i f_i(x)``.

    Subclasses implement :meth:`batch_value` and :meth:`batch_gradient` over an
    index set of samples; the component ``i`` is the batch ``groups[i]``.
    Instances are not mutated after construction.
    """

    n_samples: int
    d: int
    groups: list[np.ndarray]
    constants: ProblemConstants
    component_infima: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.groups)

    # -- sample level ---------------------------------------------------
    def batch_value(self, idx: np.ndarray, x: np.ndarray) -> float:
        raise NotImplementedError

    def batch_gradient(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def regroup(self, groups: Sequence[np.ndarray]) -> "Problem":
        """Return the same samples split into different components."""
        raise NotImplementedError

    # -- component level ------------------------------------------------
    def _index(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range for n={self.n}")
        return i

    def component_value(self, i: int, x: np.ndarray) -> float:
        return self.batch_value(self.groups[self._index(i)], x)

    def component_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.batch_gradient(self.groups[self._index(i)], x)

    def component_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.component_value(i, x) for i in range(self.n)])

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        """All component gradients at ``x`` as an ``(n, d)`` array."""
        return np.stack([self.component_gradient(i, x) for i in range(self.n)])

    def component_values_at(self, indices, points) -> np.ndarray:
        """``f_{indices[k]}(points[k])`` for paired index/point arrays."""
        return np.array([self.component_value(i, p) for i, p in zip(indices, points)])

    def component_gradients_at(self, indices, points) -> np.ndarray:
        return np.array([self.component_gradient(i, p) for i, p in zip(indices, points)])

    def component_bregman_at(self, indices, points, x) -> np.ndarray:
        """``D_{f_i}(y, x)`` for paired ``indices`` and rows ``y`` of ``points``."""
        idx = np.asarray(indices)
        pts = np.asarray(points, dtype=float)
        lin = np.einsum("ij,ij->i", self.component_gradients(x)[idx], pts - x)
        return self.component_values_at(idx, pts) - self.component_values(x)[idx] - lin

    def value(self, x: np.ndarray) -> float:
        return float(np.mean(self.component_values(x)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.component_gradients(x).mean(axis=0)

    def minimizer(self) -> Optional[np.ndarray]:
        """Closed-form minimizer when one exists, else None."""
        return None


# ---------------------------------------------------------------------------
# quadratics


class QuadraticProblem(Problem):
    """Samples ``f_j(x) = (a_j/2)||x - b_j||^2``.

    A group of samples collapses to ``(a_g/2)||x - c_g||^2 + k_g`` with
    ``a_g`` the mean curvature, ``c_g`` the curvature-weighted center and
    ``k_g >= 0`` the residual; those aggregates are what the component
    oracles evaluate.
    """

    def __init__(self, centers, curvatures=None, groups=None):
        b = np.array(centers, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2 or b.shape[0] == 0:
            raise ValueError("centers must be a nonempty sequence of vectors")
        if not np.all(np.isfinite(b)):
            raise ValueError("centers must be finite")
        N, d = b.shape
        a = np.ones(N) if curvatures is None else np.array(curvatures, dtype=float).reshape(-1)
        if a.size != N:
            raise ValueError(f"{a.size} curvatures for {N} centers")
        if not np.all(a > 0):
            raise ValueError("curvatures must be positive")
        self.centers, self.curvatures = b, a
        self.n_samples, self.d = N, d
        self.groups = singleton_groups(N) if groups is None else _check_groups(groups, N)

        ga, gc, gk = [], [], []
        for g in self.groups:
            w = a[g]
            c = (w[:, None] * b[g]).sum(axis=0) / w.sum()
            ga.append(w.mean())
            gc.append(c)
            gk.append(float(np.mean(0.5 * w * ((b[g] - c) ** 2).sum(axis=1))))
        self.group_curvatures = np.array(ga)
        self.group_centers = np.array(gc)
        self.group_offsets = np.array(gk)
        self.component_infima = self.group_offsets.copy()
        L, mu = float(self.group_curvatures.max()), float(self.group_curvatures.min())
        self.constants = ProblemConstants(L=L, mu=mu, convexity_class="each-strongly-convex")

    def regroup(self, groups):
        return QuadraticProblem(self.centers, self.curvatures, groups)

    @property
    def uniform_curvature(self) -> bool:
        return bool(np.all(self.group_curvatures == self.group_curvatures[0]))

    def batch_value(self, idx, x):
        idx = np.asarray(idx).reshape(-1)
        r = x - self.centers[idx]
        return float(np.mean(0.5 * self.curvatures[idx] * np.einsum("ij,ij->i", r, r)))

    def batch_gradient(self, idx, x):
        idx = np.asarray(idx).reshape(-1)
        return (self.curvatures[idx, None] * (x - self.centers[idx])).mean(axis=0)

    def component_value(self, i, x):
        i = self._index(i)
        r = x - self.group_centers[i]
        return float(0.5 * self.group_curvatures[i] * (r @ r) + self.group_offsets[i])

    def component_gradient(self, i, x):
        i = self._index(i)
        return self.group_curvatures[i] * (x - self.group_centers[i])

    def component_values(self, x):
        r = x - self.group_centers
        return 0.5 * self.group_curvatures * np.einsum("ij,ij->i", r, r) + self.group_offsets

    def component_gradients(self, x):
        return self.group_curvatures[:, None] * (x - self.group_centers)

    def component_values_at(self, indices, points):
        idx = np.asarray(indices)
        r = np.asarray(points, dtype=float) - self.group_centers[idx]
        return 0.5 * self.group_curvatures[idx] * np.einsum("...j,...j->...", r, r) + self.group_offsets[idx]

    def component_gradients_at(self, indices, points):
        idx = np.asarray(indices)
        return self.group_curvatures[idx][..., None] * (np.asarray(points, dtype=float) - self.group_centers[idx])

    def component_bregman_at(self, indices, points, x):
        # exact for quadratics; avoids cancellation when y is close to x
        r = np.asarray(points, dtype=float) - x
        return 0.5 * self.group_curvatures[np.asarray(indices)] * np.einsum("ij,ij->i", r, r)

    def minimizer(self):
        a = self.group_curvatures
        return (a[:, None] * self.group_centers).sum(axis=0) / a.sum()


def make_quadratic(centers, curvatures=None) -> QuadraticProblem:
    """Quadratic finite sum with components ``(a_i/2)||x - b_i||^2``.

    Parameters
    ----------
    centers : array_like, shape (n,) or (n, d)
        The component minimizers ``b_i``; a flat sequence means ``d = 1``.
    curvatures : array_like, shape (n,), optional
        Positive ``a_i``; defaults to all ones.
    """
    return QuadraticProblem(centers, curvatures)


# ---------------------------------------------------------------------------
# logistic regression


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=float)))


def spectral_norm(A, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``."""
    A = sp.csr_matrix(A)
    if A.nnz == 0:
        return 0.0
    v = np.random.default_rng(0).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - est) <= tol * norm:
            return float(np.sqrt(norm))
        est = norm
    raise ConvergenceError(f"power iteration did not reach tol={tol} in {max_iter} iterations")


class LogisticProblem(Problem):
    """L2-regularized logistic regression with the regularizer in every component.

    Sample loss: ``log(1 + exp(a^T x)) - b a^T x + (lam/2)||x||^2`` with
    ``b in {0, 1}``, which is the cross-entropy of ``sigmoid(a^T x)``.
    """

    def __init__(self, features, labels, lam: float = 0.0, groups=None, _norms=None):
        A = sp.csr_matrix(features, dtype=float)
        y = np.asarray(labels, dtype=float).reshape(-1)
        if A.shape[0] != y.size:
            raise ValueError(f"{A.shape[0]} feature rows for {y.size} labels")
        if A.shape[0] == 0 or A.shape[1] == 0:
            raise ValueError("empty dataset")
        if not np.all((y == 0) | (y == 1)):
            bad = y[(y != 0) & (y != 1)][0]
            raise ValueError(f"labels must be 0 or 1, got {bad}")
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.features, self.labels, self.lam = A, y, float(lam)
        self.n_samples, self.d = A.shape
        self.groups = singleton_groups(self.n_samples) if groups is None else _check_groups(groups, self.n_samples)
        self._blocks = [A[g] for g in self.groups]
        self._block_labels = [y[g] for g in self.groups]
        # (L_f, L_max) without the regularizer; shared across regroupings
        self._norms = _norms or self._data_smoothness()
        self.constants = self._constants()

    def _data_smoothness(self):
        N = self.n_samples
        row_sq = np.asarray(self.features.multiply(self.features).sum(axis=1)).reshape(-1)
        return spectral_norm(self.features) ** 2 / (4 * N), float(row_sq.max())

    def _constants(self) -> ProblemConstants:
        from .data import batch_smoothness

        lf, lmax = self._norms
        L_f, L_max = lf + self.lam, lmax + self.lam
        N = self.n_samples
        sizes = {g.size for g in self.groups}
        if N >= 2:
            L_comp = max(batch_smoothness(L_f, L_max, N, s) for s in sizes)
        else:
            L_comp = L_max
        L = max(L_f, L_comp)
        if L <= 0:
            # all-zero features and no regularizer: any positive L is valid
            L = 1.0
        cls = "each-strongly-convex" if self.lam > 0 else "convex"
        return ProblemConstants(L=L, mu=self.lam, convexity_class=cls, L_f=L_f, L_max=L_max)

    def regroup(self, groups):
        return LogisticProblem(self.features, self.labels, self.lam, groups, _norms=self._norms)

    def _loss(self, A, y, x):
        z = A @ x
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.lam * (x @ x))

    def _grad(self, A, y, x):
        z = A @ x
        return np.asarray(A.T @ (sigmoid(z) - y)).reshape(-1) / y.size + self.lam * x

    def batch_value(self, idx, x):
        idx = np.asarray(idx).reshape(-1)
        return self._loss(self.features[idx], self.labels[idx], x)

    def batch_gradient(self, idx, x):
        idx = np.asarray(idx).reshape(-1)
        return self._grad(self.features[idx], self.labels[idx], x)

    def component_value(self, i, x):
        i = self._index(i)
        return self._loss(self._blocks[i], self._block_labels[i], x)

    def component_gradient(self, i, x):
        i = self._index(i)
        return self._grad(self._blocks[i], self._block_labels[i], x)


def make_logistic(features, labels, lam: float = 0.0, groups=None) -> LogisticProblem:
    return LogisticProblem(features, labels, lam, groups)


# ---------------------------------------------------------------------------
# generic


class GenericProblem(Problem):
    """Finite sum assembled from per-sample callables."""

    def __init__(
        self,
        n_samples: int,
        d: int,
        sample_value: Callable[[int, np.ndarray], float],
        sample_gradient: Callable[[int, np.ndarray], np.ndarray],
        constants: ProblemConstants,
        sample_infima=None,
        groups=None,
    ):
        if n_samples < 1 or d < 1:
            raise ValueError("need n_samples >= 1 and d >= 1")
        self.n_samples, self.d = int(n_samples), int(d)
        self.sample_value, self.sample_gradient = sample_value, sample_gradient
        self.constants = constants
        self.sample_infima = None if sample_infima is None else np.asarray(sample_infima, dtype=float)
        self.groups = singleton_groups(self.n_samples) if groups is None else _check_groups(groups, self.n_samples)
        if self.sample_infima is not None:
            # mean of sample lower bounds lower-bounds the group loss
            self.component_infima = np.array([self.sample_infima[g].mean() for g in self.groups])

    def regroup(self, groups):
        return GenericProblem(
            self.n_samples, self.d, self.sample_value, self.sample_gradient,
            self.constants, self.sample_infima, groups,
        )

    def batch_value(self, idx, x):
        return float(np.mean([self.sample_value(int(j), x) for j in np.asarray(idx).reshape(-1)]))

    def batch_gradient(self, idx, x):
        return np.mean([self.sample_gradient(int(j), x) for j in np.asarray(idx).reshape(-1)], axis=0)


def make_generic(n, d, value, gradient, constants, infima=None) -> GenericProblem:
    return GenericProblem(n, d, value, gradient, constants, infima)


class CosineQuadraticProblem(Problem):
    """Samples ``f_j(x) = (1/2)||x - b_j||^2 + sum_k cos(x_k - b_jk)``.

    Each sample is 2-smooth with minimum ``d`` at ``x = b_j``; the spread of
    gradients around their mean stays bounded everywhere, so the
    bounded-variance (A = 0) regime applies. The curvature ``1 - cos`` touches
    zero, so no component is strongly convex.
    """

    def __init__(self, centers, groups=None):
        b = np.array(centers, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2 or b.shape[0] == 0:
            raise ValueError("centers must be a nonempty sequence of vectors")
        self.centers = b
        self.n_samples, self.d = b.shape
        self.groups = singleton_groups(self.n_samples) if groups is None else _check_groups(groups, self.n_samples)
        self.component_infima = np.full(self.n, float(self.d))
        self.constants = ProblemConstants(L=2.0, mu=0.0, convexity_class="convex")

    def regroup(self, groups):
        return CosineQuadraticProblem(self.centers, groups)

    def batch_value(self, idx, x):
        r = x - self.centers[np.asarray(idx).reshape(-1)]
        return float(np.mean(0.5 * np.einsum("ij,ij->i", r, r) + np.cos(r).sum(axis=1)))

    def batch_gradient(self, idx, x):
        r = x - self.centers[np.asarray(idx).reshape(-1)]
        return (r - np.sin(r)).mean(axis=0)

    def component_gradients_at(self, indices, points):
        if any(len(g) != 1 for g in self.groups):
            return super().component_gradients_at(indices, points)
        samples = np.array([g[0] for g in self.groups])[np.asarray(indices)]
        r = np.asarray(points, dtype=float) - self.centers[samples]
        return r - np.sin(r)


def make_cosine_quadratic(centers) -> CosineQuadraticProblem:
    return CosineQuadraticProblem(centers)


# ---------------------------------------------------------------------------
# free-function API


def objective(problem: Problem, x) -> float:
    return problem.value(as_vector(x, problem.d))


def gradient(problem: Problem, x) -> np.ndarray:
    return problem.gradient(as_vector(x, problem.d))


def component_gradient(problem: Problem, i: int, x) -> np.ndarray:
    return problem.component_gradient(i, as_vector(x, problem.d))


def smoothness_constants(problem: Problem) -> ProblemConstants:
    """Constants valid for ``f`` and every component.

    Logistic problems carry ``L_f = ||A||^2/(4N) + lam`` and
    ``L_max = max_i ||a_i||^2 + lam``; minibatched components use the batch
    interpolation between the two, maximized over the group sizes present.
    """
    return problem.constants


def with_constants(problem: Problem, **changes) -> Problem:
    """Shallow copy of ``problem`` with some constants replaced (e.g. a PL constant)."""
    import copy

    p = copy.copy(problem)
    p.constants = replace(problem.constants, **changes)
    return p
