"""Analytical quantities of the shuffling methods and executable bound checks.

Everything here takes the problem, a minimizer and (for the checks) recorded
trajectories, and returns plain numbers. Expectations over permutations are
exact when ``n <= 8`` and Monte Carlo otherwise; expectations over seeds come
from ensembles and carry a 95% normal confidence half-width.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import Problem, as_vector
from .optim import Trajectory, solve_reference
from .shuffle import MAX_ENUMERATION_N, RngStream, all_permutations

Z95 = 1.959963984540054

THEOREM_IDS = (
    "thm1",
    "thm2",
    "thm3",
    "thm4-nc",
    "thm4-pl",
    "thm5-ig-sc",
    "thm5-ig-fsc",
    "thm5-ig-cvx",
    "thm5-ig-nc",
    "sgd-sc",
)


class PreconditionError(ValueError):
    """A bound was requested outside the regime where it is proven."""


class MinimizerCheckError(ValueError):
    pass


def _ci(samples) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        return 0.0
    return float(Z95 * s.std(ddof=1) / math.sqrt(s.size))


def check_minimizer(problem: Problem, x_star, tol: float = 1e-8) -> np.ndarray:
    x = as_vector(x_star, problem.d)
    g = np.linalg.norm(problem.gradient(x))
    if g > tol * (1.0 + np.linalg.norm(x)):
        raise MinimizerCheckError(f"||grad f(x*)|| = {g:.3e} is too large for a minimizer")
    return x


# ---------------------------------------------------------------------------
# basic quantities


def bregman(problem: Problem, i: int, x, y) -> float:
    """``D_{f_i}(x, y) = f_i(x) - f_i(y) - <grad f_i(y), x - y>``."""
    x = as_vector(x, problem.d)
    y = as_vector(y, problem.d)
    return float(problem.component_value(i, x) - problem.component_value(i, y) - problem.component_gradient(i, y) @ (x - y))


@dataclass(frozen=True)
class LimitPoints:
    points: np.ndarray  # rows x*^1 .. x*^{n-1}
    x_star: np.ndarray
    gamma: float
    pi: tuple

    def all(self) -> np.ndarray:
        """``x*^0, ..., x*^{n-1}`` (the implied ``x*^0 = x*`` prepended)."""
        return np.vstack([self.x_star[None, :], self.points])


def _limit_offsets(G: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Cumulative gradient sums ``sum_{j<i} G[pi_j]`` for ``i = 0..n``, shape (m, n+1, d)."""
    m, n = perms.shape
    out = np.zeros((m, n + 1, G.shape[1]))
    np.cumsum(G[perms], axis=1, out=out[:, 1:])
    return out


def limit_points(problem: Problem, x_star, gamma: float, pi) -> LimitPoints:
    x = check_minimizer(problem, x_star)
    pi = np.asarray(pi, dtype=np.intp)
    if pi.shape != (problem.n,) or not np.array_equal(np.sort(pi), np.arange(problem.n)):
        raise ValueError("pi must be a permutation of the components")
    G = problem.component_gradients(x)
    S = _limit_offsets(G, pi[None, :])[0]
    pts = x - gamma * S[1:problem.n]
    return LimitPoints(pts, x, float(gamma), tuple(int(i) for i in pi))


def sigma_star_sq(problem: Problem, x_star) -> float:
    x = check_minimizer(problem, x_star)
    G = problem.component_gradients(x)
    return float(np.mean(np.einsum("ij,ij->i", G, G)))


def gradient_variance(problem: Problem, x) -> float:
    """``(1/n) sum ||grad f_i(x) - grad f(x)||^2``, summed exactly."""
    G = problem.component_gradients(as_vector(x, problem.d))
    R = G - G.mean(axis=0)
    return float(np.mean(np.einsum("ij,ij->i", R, R)))


def _gradient_table(problem: Problem, pts: np.ndarray, chunk: int = 1 << 16) -> np.ndarray:
    """Component gradients at every row of ``pts``, shape ``(m, n, d)``."""
    n, m = problem.n, pts.shape[0]
    step = max(1, chunk // n)
    out = np.empty((m, n, problem.d))
    for s in range(0, m, step):
        block = pts[s:s + step]
        idx = np.tile(np.arange(n), block.shape[0])
        out[s:s + step] = problem.component_gradients_at(idx, np.repeat(block, n, axis=0)).reshape(block.shape[0], n, -1)
    return out


def prop1_bounds(gamma: float, mu: float, L: float, n: int, sigma_star_sq: float) -> tuple[float, float]:
    """``(gamma mu n s / 8, gamma L n s / 4)`` with ``s = sigma_*^2``."""
    return gamma * mu * n * sigma_star_sq / 8.0, gamma * L * n * sigma_star_sq / 4.0


# ---------------------------------------------------------------------------
# shuffling variance


@dataclass(frozen=True)
class VarianceReport:
    sigma_star_sq: float
    sigma_shuffle_sq: float
    ci_halfwidth: float
    num_permutations: Union[int, str]
    prop1_lower: float
    prop1_upper: float
    gamma: float
    per_position: np.ndarray = field(repr=False, default=None)
    per_permutation: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def in_sandwich(self) -> bool:
        return (self.prop1_lower <= self.sigma_shuffle_sq + self.ci_halfwidth
                and self.sigma_shuffle_sq - self.ci_halfwidth <= self.prop1_upper)


def _shuffle_divergences(problem: Problem, x: np.ndarray, G: np.ndarray, gamma: float, perms: np.ndarray) -> np.ndarray:
    """``D_{f_{pi_i}}(x*^i, x*)`` for ``i = 1..n-1`` and every row of ``perms``."""
    m, n = perms.shape
    S = _limit_offsets(G, perms)[:, 1:n]  # (m, n-1, d)
    idx = perms[:, 1:n]
    pts = x - gamma * S
    return problem.component_bregman_at(idx.reshape(-1), pts.reshape(-1, x.size), x).reshape(m, n - 1)


def sigma_shuffle_sq(
    problem: Problem,
    x_star,
    gamma: float,
    num_perms: Union[int, str] = "exact",
    seed: int = 0,
    keep_per_permutation: bool = False,
) -> VarianceReport:
    """Shuffling variance ``max_i (1/gamma) E[D_{f_{pi_i}}(x*^i, x*)]``.

    The expectation is an exact average over all ``n!`` orders when
    ``n <= 8``; otherwise it is a Monte Carlo mean over ``num_perms`` sampled
    orders and ``ci_halfwidth`` is the 95% half-width at the maximizing
    position. With ``n = 1`` there is no inner position and the value is 0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = check_minimizer(problem, x_star)
    n = problem.n
    G = problem.component_gradients(x)
    s_star = float(np.mean(np.einsum("ij,ij->i", G, G)))
    c = problem.constants
    lo, hi = prop1_bounds(gamma, c.mu, c.L, n, s_star)
    if n == 1:
        return VarianceReport(s_star, 0.0, 0.0, "exact", lo, hi, float(gamma), np.zeros(0))

    if n <= MAX_ENUMERATION_N:
        perms, label = all_permutations(n), "exact"
    else:
        if num_perms == "exact":
            raise ValueError(f"exact enumeration is capped at n={MAX_ENUMERATION_N}; pass a sample count")
        if int(num_perms) < 2:
            raise ValueError("Monte Carlo mode needs num_perms >= 2")
        rng = RngStream(seed).setup()
        perms, label = np.argsort(rng.random((int(num_perms), n)), axis=1), int(num_perms)

    # chunk to keep memory bounded for large samples
    rows = []
    chunk = max(1, 2_000_000 // max(1, n * problem.d))
    for s in range(0, len(perms), chunk):
        rows.append(_shuffle_divergences(problem, x, G, gamma, perms[s:s + chunk]))
    D = np.vstack(rows) / gamma  # (m, n-1)
    per_pos = D.mean(axis=0)
    k = int(np.argmax(per_pos))
    ci = 0.0 if label == "exact" else _ci(D[:, k])
    return VarianceReport(
        s_star, float(per_pos[k]), ci, label, lo, hi, float(gamma), per_pos,
        D.max(axis=1) if keep_per_permutation else None,
    )


def per_permutation_shuffle_values(problem: Problem, x_star, gamma: float, num: int, seed: int = 0) -> np.ndarray:
    """``max_i (1/gamma) D_{f_{pi_i}}(x*^i, x*)`` for ``num`` sampled orders."""
    x = check_minimizer(problem, x_star)
    n = problem.n
    if n == 1:
        return np.zeros(num)
    rng = RngStream(seed).setup()
    perms = np.argsort(rng.random((num, n)), axis=1)
    G = problem.component_gradients(x)
    return (_shuffle_divergences(problem, x, G, gamma, perms) / gamma).max(axis=1)


# ---------------------------------------------------------------------------
# Assumption-2 constants


@dataclass(frozen=True)
class AssumptionConstants:
    A: float
    B_sq: float
    provenance: str

    @property
    def heuristic(self) -> bool:
        return self.provenance == "grid-estimate"


def assumption2_constants(problem: Problem, grid=None, f_star: Optional[float] = None) -> AssumptionConstants:
    """Constants ``(A, B^2)`` with ``sigma^2(x) <= 2A (f(x) - f*) + B^2``.

    With a ``grid`` of points the estimate takes ``A = 0`` and the largest
    gradient variance on the grid (valid only on those points). Without one,
    known component infima give ``A = L`` and ``B^2 = 2L(f* - mean f_i*)``.
    """
    if grid is not None:
        pts = np.atleast_2d(np.asarray(grid, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("empty grid")
        G = _gradient_table(problem, np.unique(pts, axis=0))
        R = G - G.mean(axis=1, keepdims=True)
        return AssumptionConstants(0.0, float(np.einsum("mid,mid->mi", R, R).mean(axis=1).max()), "grid-estimate")
    if problem.component_infima is None:
        raise ValueError("component infima unknown and no grid supplied")
    L = problem.constants.L
    if f_star is None:
        f_star = problem.value(solve_reference(problem))
    gap = f_star - float(np.mean(problem.component_infima))
    return AssumptionConstants(L, 2.0 * L * max(gap, 0.0), "prop2-analytic")


# ---------------------------------------------------------------------------
# per-epoch deviations


def epoch_deviations(trajectory: Trajectory, t: int) -> tuple[float, float]:
    """Backward ``V_t = sum_{i=1}^n ||x_t^i - x_t||^2`` and forward
    ``sum_{i=0}^{n-1} ||x_t^i - x_{t+1}||^2``."""
    if trajectory.inner_iterates is None:
        raise ValueError("inner iterates were not recorded")
    if trajectory.inner_steps is not None and len(trajectory.inner_steps) != trajectory.inner_iterates[t].shape[0]:
        raise ValueError("inner iterates were thinned; record every step")
    X = trajectory.inner_iterates[t]
    back = X[1:] - X[0]
    fwd = X[:-1] - X[-1]
    return float(np.sum(back * back)), float(np.sum(fwd * fwd))


# ---------------------------------------------------------------------------
# corollary stepsizes

_COR = {"thm1": "cor1", "cor1": "cor1", "thm3": "cor2", "cor2": "cor2", "thm4": "cor3", "thm4-nc": "cor3", "cor3": "cor3"}


def recommended_stepsize(setting: str, **p) -> float:
    """Stepsize of the corollary attached to ``setting``.

    cor1 needs ``L, mu, n, T, r0`` (distance ``||x0 - x*||``) and ``sigma_star``;
    cor2 needs ``L, n, T, r0, sigma_star``; cor3 needs ``L, n, T, A, B, eps``.
    Infinite limbs (zero variance or ``A = 0``) drop out of the minimum.
    """
    kind = _COR.get(setting)
    if kind is None:
        raise ValueError(f"no stepsize rule for {setting!r}")

    def need(*names):
        missing = [k for k in names if k not in p]
        if missing:
            raise ValueError(f"missing parameters {missing} for {kind}")
        return [float(p[k]) for k in names]

    if kind == "cor1":
        L, mu, n, T, r0, s = need("L", "mu", "n", "T", "r0", "sigma_star")
        if not (L > 0 and mu > 0 and n >= 1 and T >= 1):
            raise ValueError("cor1 needs positive L, mu, n, T")
        if s == 0:
            return 1.0 / L
        kappa = L / mu
        arg = r0 * mu * T * math.sqrt(n) / (math.sqrt(kappa) * s)
        if not arg > 1:
            warnings.warn(f"cor1 log argument {arg:g} <= 1; falling back to 1/L", RuntimeWarning)
            return 1.0 / L
        return min(1.0 / L, 2.0 / (mu * n * T) * math.log(arg))
    if kind == "cor2":
        L, n, T, r0, s = need("L", "n", "T", "r0", "sigma_star")
        second = (r0 ** 2 / (L * n * n * T * s * s)) ** (1.0 / 3.0) if s > 0 else math.inf
        return min(1.0 / (math.sqrt(2.0) * L * n), second)
    L, n, T, A, B, eps = need("L", "n", "T", "A", "B", "eps")
    mid = 1.0 / (A ** (1 / 3) * L ** (2 / 3) * n ** (2 / 3) * T ** (1 / 3)) if A > 0 else math.inf
    last = eps / (2.0 * L * math.sqrt(n) * B) if B > 0 else math.inf
    return min(1.0 / (2.0 * L * n), mid, last)


# ---------------------------------------------------------------------------
# bound checks


@dataclass(frozen=True)
class BoundCheck:
    theorem_id: str
    rhs: float
    observed: float
    ci_halfwidth: float
    slack: float
    passed: bool
    details: dict = field(default_factory=dict, compare=False)

    @property
    def pass_(self) -> bool:
        return self.passed


_METHODS = {
    "thm1": ("RR", "SO"),
    "thm2": ("RR", "SO"),
    "thm3": ("RR", "SO"),
    "thm4-nc": ("RR",),
    "thm4-pl": ("RR",),
    "thm5-ig-sc": ("IG",),
    "thm5-ig-fsc": ("IG",),
    "thm5-ig-cvx": ("IG",),
    "thm5-ig-nc": ("IG",),
    "sgd-sc": ("SGD-iid",),
}

_SC = ("each-strongly-convex", "f-strongly-convex")
_CLASSES = {
    "thm1": ("each-strongly-convex",),
    "thm5-ig-sc": ("each-strongly-convex",),
    "thm2": _SC,
    "thm5-ig-fsc": _SC,
    "sgd-sc": _SC,
    "thm3": _SC + ("convex",),
    "thm5-ig-cvx": _SC + ("convex",),
}


def _stepsize_cap(theorem_id: str, L: float, n: int, T: int, A: float) -> float:
    r2 = math.sqrt(2.0)
    if theorem_id in ("thm1", "thm5-ig-sc"):
        return 1.0 / L
    if theorem_id == "sgd-sc":
        return 1.0 / (2.0 * L)
    if theorem_id in ("thm2", "thm3", "thm5-ig-fsc", "thm5-ig-cvx"):
        return 1.0 / (r2 * L * n)
    if theorem_id in ("thm4-nc", "thm4-pl"):
        extra = (A * L * L * n * n * T) ** (-1 / 3) if A > 0 else math.inf
        return min(1.0 / (2.0 * L * n), extra)
    # thm5-ig-nc
    extra = (4.0 * L * L * n ** 3 * A * T) ** (-1 / 3) if A > 0 else math.inf
    return min(1.0 / (math.sqrt(8.0) * n * L), extra)


def _validate(theorem_id, problem, trajs, gamma, ensemble=True):
    if theorem_id not in THEOREM_IDS:
        raise ValueError(f"unknown theorem id {theorem_id!r}")
    if not trajs:
        raise PreconditionError("empty ensemble")
    methods = {t.method for t in trajs}
    if len(methods) != 1 or not methods <= set(_METHODS[theorem_id]):
        raise PreconditionError(f"{theorem_id} covers {_METHODS[theorem_id]}, got {sorted(methods)}")
    if ensemble and "IG" not in methods and len(trajs) < 2:
        raise PreconditionError("stochastic methods need an ensemble of at least two runs")
    T = trajs[0].T
    x0 = trajs[0].epoch_iterates[0]
    for tr in trajs:
        if tr.T != T or not np.array_equal(tr.epoch_iterates[0], x0):
            raise PreconditionError("ensemble members differ in T or x0")
        if not np.all(tr.gammas == gamma):
            raise PreconditionError("bounds hold for a constant stepsize equal to gamma")
        if tr.epoch_iterates.shape[1] != problem.d:
            raise PreconditionError("trajectory dimension does not match the problem")
    if not gamma > 0:
        raise PreconditionError("gamma must be positive")
    cls = problem.constants.convexity_class
    allowed = _CLASSES.get(theorem_id)
    if allowed is not None:
        if cls not in allowed:
            raise PreconditionError(f"{theorem_id} needs class in {allowed}, problem is {cls!r}")
        if theorem_id not in ("thm3", "thm5-ig-cvx") and not problem.constants.mu > 0:
            raise PreconditionError(f"{theorem_id} needs mu > 0")
    if theorem_id == "thm4-pl" and not problem.constants.strong_convexity > 0:
        raise PreconditionError("thm4-pl needs a PL (or strong convexity) constant")
    return T, x0


def check_bound(
    theorem_id: str,
    problem: Problem,
    trajectories: Sequence[Trajectory],
    gamma: float,
    slack: float = 0.0,
    x_star=None,
    assumption: Optional[AssumptionConstants] = None,
    num_perms: Union[int, str] = "exact",
    seed: int = 0,
) -> BoundCheck:
    """Compare an ensemble against the closed-form bound of ``theorem_id``.

    Raises :class:`PreconditionError` instead of reporting when the
    stepsize, problem class, method or schedule falls outside the theorem.
    Stochastic methods add a 95% CI half-width to the bound; IG runs are
    deterministic and add none.
    """
    trajs = list(trajectories)
    gamma = float(gamma)
    T, x0 = _validate(theorem_id, problem, trajs, gamma)
    c = problem.constants
    L, n = c.L, problem.n
    mu = c.strong_convexity

    if x_star is None:
        x_star = solve_reference(problem)
    x_star = as_vector(x_star, problem.d)
    f_star = problem.value(x_star)

    nonconvex_id = theorem_id in ("thm4-nc", "thm4-pl", "thm5-ig-nc")
    if nonconvex_id:
        if assumption is None:
            # A = 0 with B^2 from the gradient variance over the visited epoch iterates
            visited = np.vstack([tr.epoch_iterates for tr in trajs])
            assumption = assumption2_constants(problem, grid=visited)
        A, B2 = assumption.A, assumption.B_sq
        if theorem_id == "thm4-pl" and A != 0:
            raise PreconditionError("the PL branch needs A = 0")
    else:
        A = B2 = 0.0
        x_star = check_minimizer(problem, x_star)

    cap = _stepsize_cap(theorem_id, L, n, T, A)
    if gamma > cap * (1 + 1e-12):
        raise PreconditionError(f"{theorem_id} needs gamma <= {cap:.6g}, got {gamma:.6g}")

    r0 = float(np.sum((x0 - x_star) ** 2))
    d0 = problem.value(x0) - f_star
    details = {"method": trajs[0].method, "n": n, "T": T, "gamma": gamma, "runs": len(trajs), "L": L, "mu": mu}
    extra_ci = 0.0

    if theorem_id in ("thm1", "thm2", "thm5-ig-sc", "thm5-ig-fsc", "sgd-sc"):
        samples = np.array([np.sum((tr.final() - x_star) ** 2) for tr in trajs])
        s_star = sigma_star_sq(problem, x_star)
        kappa = L / mu
        if theorem_id == "thm1":
            rep = sigma_shuffle_sq(problem, x_star, gamma, num_perms=num_perms, seed=seed)
            rhs = (1 - gamma * mu) ** (n * T) * r0 + 2 * gamma * rep.sigma_shuffle_sq / mu
            extra_ci = 2 * gamma * rep.ci_halfwidth / mu
            details["sigma_shuffle_sq"] = rep.sigma_shuffle_sq
            if trajs[0].method == "SO" and all(len(tr.base or ()) == n for tr in trajs):
                details["conditional_pass"] = so_conditional_check(problem, trajs, gamma, x_star).holds
        elif theorem_id == "thm2":
            rhs = (1 - gamma * mu * n / 2) ** T * r0 + gamma ** 2 * kappa * n * s_star
        elif theorem_id == "thm5-ig-sc":
            rhs = (1 - gamma * mu) ** (n * T) * r0 + gamma ** 2 * kappa * n * n * s_star
        elif theorem_id == "thm5-ig-fsc":
            rhs = (1 - gamma * mu * n / 2) ** T * r0 + 2 * gamma ** 2 * kappa * n * n * s_star
        else:
            rhs = (1 - gamma * mu) ** (n * T) * r0 + 2 * gamma * s_star / mu
        details["sigma_star_sq"] = s_star
        observed, ci = float(samples.mean()), _ci(samples)
    elif theorem_id in ("thm3", "thm5-ig-cvx"):
        samples = np.array([problem.value(tr.epoch_iterates[1:].mean(axis=0)) - f_star for tr in trajs])
        s_star = sigma_star_sq(problem, x_star)
        if theorem_id == "thm3":
            rhs = r0 / (2 * gamma * n * T) + gamma ** 2 * L * n * s_star / 4
        else:
            rhs = r0 / (2 * gamma * n * T) + gamma ** 2 * L * n * n * s_star / 2
        details["sigma_star_sq"] = s_star
        observed, ci = float(samples.mean()), _ci(samples)
    elif theorem_id in ("thm4-nc", "thm5-ig-nc"):
        pts = np.stack([tr.epoch_iterates[:T] for tr in trajs])
        grads = _gradient_table(problem, pts.reshape(-1, problem.d)).mean(axis=1)
        G = np.sum(grads ** 2, axis=1).reshape(len(trajs), T)
        means = G.mean(axis=0)
        k = int(np.argmin(means))
        observed, ci = float(means[k]), _ci(G[:, k])
        if theorem_id == "thm4-nc":
            rhs = 12 * d0 / (gamma * n * T) + 2 * gamma ** 2 * L * L * n * B2
        else:
            rhs = 12 * d0 / (gamma * n * T) + 8 * gamma ** 2 * L * L * n * n * B2
        details.update(A=A, B_sq=B2, argmin_epoch=k)
    else:  # thm4-pl
        samples = np.array([problem.value(tr.final()) - f_star for tr in trajs])
        rhs = (1 - gamma * mu * n / 2) ** T * d0 + gamma ** 2 * (L / mu) * L * n * B2
        observed, ci = float(samples.mean()), _ci(samples)
        details.update(A=A, B_sq=B2)

    if trajs[0].method == "IG":
        ci = 0.0
    ci += extra_ci
    passed = bool(observed <= rhs * (1 + slack) + ci)
    return BoundCheck(theorem_id, float(rhs), observed, float(ci), float(slack), passed, details)


def so_conditional_check(problem: Problem, trajectories: Sequence[Trajectory], gamma: float, x_star=None) -> EnsembleComparison:
    """Per-run strongly convex bound for Shuffle-Once given its own permutation.

    Once ``pi`` is fixed the one-step recursion holds without expectation,
    so every run must satisfy ``||x_T - x*||^2 <= (1 - gamma mu)^{nT} r0 +
    2 gamma sigma_pi / mu`` with ``sigma_pi = max_i (1/gamma) D_{f_{pi_i}}(x*^i, x*)``.
    """
    trajs = list(trajectories)
    gamma = float(gamma)
    T, x0 = _validate("thm1", problem, trajs, gamma, ensemble=False)
    if {t.method for t in trajs} != {"SO"}:
        raise PreconditionError("the conditional check is for Shuffle-Once runs")
    if gamma > (1 + 1e-12) / problem.constants.L:
        raise PreconditionError(f"needs gamma <= 1/L = {1 / problem.constants.L:.6g}")
    n, mu = problem.n, problem.constants.strong_convexity
    x = check_minimizer(problem, solve_reference(problem) if x_star is None else x_star)
    if any(t.base is None or len(t.base) != n for t in trajs):
        raise PreconditionError("runs must carry their component permutation")
    perms = np.array([t.base for t in trajs])
    if n == 1:
        sig = np.zeros(len(trajs))
    else:
        G = problem.component_gradients(x)
        sig = (_shuffle_divergences(problem, x, G, gamma, perms) / gamma).max(axis=1)
    r0 = float(np.sum((x0 - x) ** 2))
    rhs = (1 - gamma * mu) ** (n * T) * r0 + 2 * gamma * sig / mu
    lhs = np.array([np.sum((t.final() - x) ** 2) for t in trajs])
    return EnsembleComparison(lhs, rhs, np.zeros_like(lhs))


# ---------------------------------------------------------------------------
# lemma-level checks


@dataclass(frozen=True)
class EnsembleComparison:
    """Per-index ensemble means of a left and right side, with the left's CI."""

    lhs: np.ndarray
    rhs: np.ndarray
    ci: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + self.ci))


def descent_violations(problem: Problem, trajectory: Trajectory, gamma: float, rel_tol: float = 1e-9) -> list:
    """Epochs where ``f(x_{t+1}) <= f(x_t) - (gamma n/2)||grad f(x_t)||^2 + (gamma L^2/2) V_t`` fails.

    The inequality is deterministic for any permutation once
    ``gamma <= 1/(L n)``; it needs every component once per epoch, so
    with-replacement SGD epochs are refused. Returns ``(t, lhs, rhs)`` for
    each violation beyond ``rel_tol``.
    """
    L, n = problem.constants.L, problem.n
    if trajectory.method.startswith("SGD"):
        raise PreconditionError("the descent inequality needs permutation epochs (RR, SO, IG)")
    if gamma > 1.0 / (L * n) * (1 + 1e-12):
        raise PreconditionError(f"descent inequality needs gamma <= 1/(Ln) = {1 / (L * n):.6g}")
    bad = []
    for t in range(trajectory.T):
        x, x1 = trajectory.epoch_iterates[t], trajectory.epoch_iterates[t + 1]
        V, _ = epoch_deviations(trajectory, t)
        fx = problem.value(x)
        g = problem.gradient(x)
        lhs = problem.value(x1)
        rhs = fx - gamma * n / 2 * float(g @ g) + gamma * L * L / 2 * V
        if lhs > rhs + rel_tol * max(1.0, abs(fx), abs(lhs)):
            bad.append((t, lhs, rhs))
    return bad


def backward_deviation_check(problem: Problem, trajectories: Sequence[Trajectory], gamma: float) -> EnsembleComparison:
    """Per epoch: mean ``V_t`` against ``gamma^2 n^3 ||grad f(x_t)||^2 + gamma^2 n^2 sigma_t^2``
    (both sides averaged over the RR ensemble)."""
    L, n = problem.constants.L, problem.n
    if gamma > 1.0 / (2 * L * n) * (1 + 1e-12):
        raise PreconditionError("the V_t bound needs gamma <= 1/(2Ln)")
    if any(tr.method != "RR" for tr in trajectories):
        raise PreconditionError("the V_t bound is for RR")
    T = trajectories[0].T
    V = np.empty((len(trajectories), T))
    R = np.empty_like(V)
    for r, tr in enumerate(trajectories):
        for t in range(T):
            x = tr.epoch_iterates[t]
            g = problem.gradient(x)
            V[r, t] = epoch_deviations(tr, t)[0]
            R[r, t] = gamma ** 2 * n ** 3 * float(g @ g) + gamma ** 2 * n ** 2 * gradient_variance(problem, x)
    ci = np.array([_ci(V[:, t]) + _ci(R[:, t]) for t in range(T)])
    return EnsembleComparison(V.mean(axis=0), R.mean(axis=0), ci)


def forward_deviation_check(problem: Problem, trajectories: Sequence[Trajectory], gamma: float, x_star=None) -> EnsembleComparison:
    """Per epoch: mean forward deviation against
    ``4 gamma^2 n^2 L sum_i D_{f_{pi_i}}(x*, x_t^i) + gamma^2 n^2 sigma_*^2 / 2``."""
    c = problem.constants
    L, n = c.L, problem.n
    if c.convexity_class == "nonconvex" or c.convexity_class == "pl":
        raise PreconditionError("the forward-deviation bound needs convex components")
    if gamma > 1.0 / (math.sqrt(2) * L * n) * (1 + 1e-12):
        raise PreconditionError("the forward-deviation bound needs gamma <= 1/(sqrt(2) L n)")
    if any(tr.method != "RR" or tr.orderings is None for tr in trajectories):
        raise PreconditionError("needs RR runs with recorded orderings")
    x_star = check_minimizer(problem, solve_reference(problem) if x_star is None else x_star)
    s_star = sigma_star_sq(problem, x_star)
    f_star_i = problem.component_values(x_star)
    T = trajectories[0].T
    F = np.empty((len(trajectories), T))
    R = np.empty_like(F)
    for r, tr in enumerate(trajectories):
        for t in range(T):
            X = tr.epoch_inner(t)[:n]
            pi = np.asarray(tr.orderings[t])
            gi = problem.component_gradients_at(pi, X)
            D = f_star_i[pi] - problem.component_values_at(pi, X) - np.einsum("ij,ij->i", gi, x_star - X)
            F[r, t] = epoch_deviations(tr, t)[1]
            R[r, t] = 4 * gamma ** 2 * n ** 2 * L * float(D.sum()) + gamma ** 2 * n ** 2 * s_star / 2
    ci = np.array([_ci(F[:, t]) + _ci(R[:, t]) for t in range(T)])
    return EnsembleComparison(F.mean(axis=0), R.mean(axis=0), ci)


def limit_point_distances(problem: Problem, trajectories: Sequence[Trajectory], x_star, gamma: float):
    """Squared distances of inner iterates to the epoch's limit points and to ``x*``.

    Returns two arrays of shape ``(runs, T, n)`` indexed by ``(run, t, i)``
    for ``i = 0..n-1``: ``||x_t^i - x*^i(pi_t)||^2`` and ``||x_t^i - x*||^2``.
    """
    x = check_minimizer(problem, x_star)
    G = problem.component_gradients(x)
    n = problem.n
    runs, T = len(trajectories), trajectories[0].T
    track = np.empty((runs, T, n))
    raw = np.empty((runs, T, n))
    for r, tr in enumerate(trajectories):
        if tr.orderings is None or tr.inner_iterates is None:
            raise ValueError("needs recorded orderings and inner iterates")
        perms = np.array(tr.orderings)
        lim = x - gamma * _limit_offsets(G, perms)[:, :n]  # (T, n, d)
        X = np.stack(tr.inner_iterates)[:, :n]
        track[r] = np.sum((X - lim) ** 2, axis=2)
        raw[r] = np.sum((X - x) ** 2, axis=2)
    return track, raw


def inner_recursion_check(problem: Problem, trajectories: Sequence[Trajectory], x_star, gamma: float, sigma_shuffle: float) -> EnsembleComparison:
    """Per inner step ``(t, i)``: mean ``||x_t^{i+1} - x*^{i+1}||^2`` against
    ``(1 - gamma mu) mean ||x_t^i - x*^i||^2 + 2 gamma^2 sigma_shuffle``.

    Uses ``x*^n = x*`` at the epoch end. Results are flattened over ``(t, i)``.
    """
    mu = problem.constants.mu
    x = check_minimizer(problem, x_star)
    G = problem.component_gradients(x)
    n = problem.n
    runs, T = len(trajectories), trajectories[0].T
    D = np.empty((runs, T, n + 1))
    for r, tr in enumerate(trajectories):
        perms = np.array(tr.orderings)
        lim = x - gamma * _limit_offsets(G, perms)
        lim[:, n] = x
        X = np.stack(tr.inner_iterates)
        D[r] = np.sum((X - lim) ** 2, axis=2)
    lhs = D[:, :, 1:].mean(axis=0).reshape(-1)
    rhs = ((1 - gamma * mu) * D[:, :, :n].mean(axis=0) + 2 * gamma ** 2 * sigma_shuffle).reshape(-1)
    ci = np.array([_ci(D[:, t, i + 1]) + (1 - gamma * mu) * _ci(D[:, t, i]) for t in range(T) for i in range(n)])
    return EnsembleComparison(lhs, rhs, ci)
