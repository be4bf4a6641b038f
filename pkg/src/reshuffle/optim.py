"""Epoch-based runners for RR, SO, IG and SGD, plus the reference solver."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import ConvergenceError, Problem, as_vector
from .data import group_minibatches
from .shuffle import OrderingScheme, RngStream, epoch_ordering, sample_permutation


class DivergenceError(FloatingPointError):
    """An iterate left the finite reals.

    ``step`` is the global step index (``epoch * n + inner``) whose update
    produced the non-finite coordinate; ``last_finite`` is the iterate before it.
    """

    def __init__(self, step: int, epoch: int, inner: int, last_finite: np.ndarray):
        self.step, self.epoch, self.inner = step, epoch, inner
        self.last_finite = last_finite
        self.partial = None  # Trajectory of the completed epochs, set by run()
        super().__init__(f"non-finite iterate at step {step} (epoch {epoch}, inner step {inner})")

    def __reduce__(self):
        return (_rebuild_divergence, (self.step, self.epoch, self.inner, self.last_finite, self.partial))


def _rebuild_divergence(step, epoch, inner, last_finite, partial):
    e = DivergenceError(step, epoch, inner, last_finite)
    e.partial = partial
    return e


# ---------------------------------------------------------------------------
# stepsizes


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "constant"
    gamma: Optional[float] = None
    L: Optional[float] = None
    mu: Optional[float] = None
    k0: int = 0
    c: float = 3.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.gamma is None or not self.gamma >= 0:
                raise ValueError("constant schedule needs gamma >= 0")
        elif self.kind == "capped-inverse":
            if not (self.L and self.L > 0 and self.mu and self.mu > 0 and self.c > 0):
                raise ValueError("capped-inverse schedule needs L > 0, mu > 0, c > 0")
            if self.k0 < 0:
                raise ValueError("k0 must be nonnegative")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, gamma: float) -> "StepSchedule":
        return cls("constant", gamma=float(gamma))

    @classmethod
    def capped_inverse(cls, L, mu, k0, c=3.0) -> "StepSchedule":
        return cls("capped-inverse", L=float(L), mu=float(mu), k0=int(k0), c=float(c))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


def step_size(schedule: StepSchedule, k: int) -> float:
    """Stepsize for global step ``k`` (0-based).

    ``capped-inverse`` is ``min(1/L, c / (mu * max(1, k - k0)))``; use ``c=3``
    for the shuffling methods and ``c=2`` for SGD.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if schedule.kind == "constant":
        return schedule.gamma
    return min(1.0 / schedule.L, schedule.c / (schedule.mu * max(1, k - schedule.k0)))


def default_k0(n: int, epochs: int) -> int:
    """Warm-up length ``floor(K/40)`` with ``K = n * epochs`` total steps."""
    return (n * epochs) // 40


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    method: str
    seed: int
    epoch_iterates: np.ndarray
    gammas: np.ndarray
    inner_iterates: Optional[list] = None
    inner_steps: Optional[np.ndarray] = None
    orderings: Optional[list] = None
    base: Optional[tuple] = None

    @property
    def T(self) -> int:
        return len(self.epoch_iterates) - 1

    def epoch_inner(self, t: int) -> np.ndarray:
        """Inner iterates ``x_t^0, ..., x_t^n`` of epoch ``t`` (requires full recording)."""
        if self.inner_iterates is None:
            raise ValueError("inner iterates were not recorded")
        return self.inner_iterates[t]

    def final(self) -> np.ndarray:
        return self.epoch_iterates[-1]


@dataclass
class RunConfig:
    method: Union[str, OrderingScheme]
    schedule: StepSchedule
    epochs: int
    seed: int = 0
    x0: Optional[np.ndarray] = None
    record_inner: bool = False
    record_every: int = 1
    record_orderings: bool = False
    regroup: bool = True
    sgd_batch: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")

    @property
    def kind(self) -> str:
        return self.method.kind if isinstance(self.method, OrderingScheme) else self.method


def run_epoch(
    problem: Problem,
    x: np.ndarray,
    ordering,
    schedule: StepSchedule,
    k_start: int = 0,
    recorder: Optional[Callable[[int, np.ndarray], None]] = None,
    epoch: int = 0,
    gammas: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Take one sequential gradient step per entry of ``ordering``.

    Integer entries are component indices; array entries are sample index
    sets (minibatches formed on the fly). ``recorder(i, x)`` sees every inner
    iterate ``x^i`` for ``i = 1..len(ordering)``. ``gammas`` optionally
    supplies the precomputed stepsizes of this epoch.
    """
    x = np.array(x, dtype=float)
    for i, c in enumerate(ordering):
        gamma = step_size(schedule, k_start + i) if gammas is None else gammas[i]
        if isinstance(c, np.ndarray):
            g = problem.batch_gradient(c, x)
        else:
            g = problem.component_gradient(c, x)
        nx = x - gamma * g
        # the sum is a cheap screen; confirm elementwise before raising
        if not math.isfinite(nx.sum()) and not np.all(np.isfinite(nx)):
            raise DivergenceError(k_start + i, epoch, i, x)
        x = nx
        if recorder is not None:
            recorder(i + 1, x)
    return x


def _is_grouped(problem: Problem) -> bool:
    return any(g.size != 1 for g in problem.groups)


def _setup(config: RunConfig, problem: Problem, stream: RngStream):
    """Resolve the scheme and any run-level state (SO base, SGD window order)."""
    kind = config.kind
    n, N = problem.n, problem.n_samples
    scheme = config.method if isinstance(config.method, OrderingScheme) else None
    state = {}
    if kind == "SO":
        if _is_grouped(problem):
            # shuffle samples once, then form the groups from that order
            tau = problem.groups[0].size
            perm = sample_permutation(stream.setup(), N)
            problem = problem.regroup(group_minibatches(N, tau, perm).groups)
            scheme = OrderingScheme.so(range(n))
        elif scheme is None:
            scheme = OrderingScheme.so(sample_permutation(stream.setup(), n))
    elif kind == "SGD-window":
        tau = config.sgd_batch or (problem.groups[0].size if _is_grouped(problem) else 1)
        scheme = scheme or OrderingScheme("SGD-window", window_tau=tau)
        state["window_order"] = sample_permutation(stream.setup(), N) if tau > 1 else None
    elif scheme is None:
        scheme = OrderingScheme(kind)
    return problem, scheme, state


def _epoch_steps(problem: Problem, scheme: OrderingScheme, rng, config: RunConfig, state):
    n, N = problem.n, problem.n_samples
    grouped = _is_grouped(problem)
    if scheme.kind == "RR" and grouped and config.regroup:
        tau = problem.groups[0].size
        perm = sample_permutation(rng, N)
        return list(group_minibatches(N, tau, perm).groups), perm
    if scheme.kind == "SGD-iid" and (grouped or (config.sgd_batch or 1) > 1):
        tau = config.sgd_batch or problem.groups[0].size
        return [rng.integers(0, N, size=tau) for _ in range(n)], None
    if scheme.kind == "SGD-window" and scheme.window_tau > 1:
        tau, order = scheme.window_tau, state["window_order"]
        starts = rng.integers(0, N, size=n)
        return [order[(s + np.arange(tau)) % N] for s in starts], None
    order = epoch_ordering(scheme, 0, rng, n)
    return order, order


def run(config: RunConfig, problem: Problem) -> Trajectory:
    """Run ``config.epochs`` epochs of the configured method.

    Deterministic given ``(config, problem)``. For SGD an epoch is ``n``
    steps, so every method shares the same x-axis of data passes.
    """
    stream = RngStream(config.seed)
    problem, scheme, state = _setup(config, problem, stream)
    n = problem.n
    x = np.zeros(problem.d) if config.x0 is None else as_vector(config.x0, problem.d)

    T = config.epochs
    epoch_iterates = np.empty((T + 1, problem.d))
    epoch_iterates[0] = x
    gammas = np.array([step_size(config.schedule, k) for k in range(n * T)])
    inner = [] if config.record_inner else None
    orderings = [] if (config.record_orderings or config.record_inner) else None
    every = config.record_every
    keep = np.arange(0, n + 1, every)
    if keep[-1] != n:
        keep = np.append(keep, n)

    def build(upto):
        return Trajectory(
            method=scheme.kind,
            seed=config.seed,
            epoch_iterates=epoch_iterates[:upto + 1].copy(),
            gammas=gammas,
            inner_iterates=inner,
            inner_steps=keep if inner is not None else None,
            orderings=orderings,
            base=scheme.base,
        )

    for t in range(T):
        steps, realized = _epoch_steps(problem, scheme, stream.epoch(t), config, state)
        try:
            if inner is not None:
                buf = np.empty((n + 1, problem.d))
                buf[0] = x

                def rec(i, xi, buf=buf):
                    buf[i] = xi

                x = run_epoch(problem, x, steps, config.schedule, t * n, rec, epoch=t, gammas=gammas[t * n:(t + 1) * n])
                inner.append(buf if every == 1 else buf[keep])
            else:
                x = run_epoch(problem, x, steps, config.schedule, t * n, epoch=t, gammas=gammas[t * n:(t + 1) * n])
        except DivergenceError as e:
            # completed epochs stay available to callers that log them
            e.partial = build(t)
            raise
        if orderings is not None:
            orderings.append(None if realized is None else np.asarray(realized))
        epoch_iterates[t + 1] = x

    return build(T)


def _run_one(args):
    config, problem = args
    return run(config, problem)


def run_ensemble(config: RunConfig, problem: Problem, seeds: Sequence[int], workers: int = 1) -> list[Trajectory]:
    """Run one trajectory per seed; results come back in seed order."""
    from dataclasses import replace

    configs = [replace(config, seed=int(s)) for s in seeds]
    if workers <= 1 or len(configs) < 2:
        return [run(c, problem) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, [(c, problem) for c in configs], chunksize=max(1, len(configs) // (4 * workers))))


# ---------------------------------------------------------------------------
# reference solution


def solve_reference(problem: Problem, tol: Optional[float] = None, x0=None, max_grad_evals: int = 10**6) -> np.ndarray:
    """High-precision minimizer by Nesterov's accelerated gradient method.

    Stops once ``||grad f(x)|| <= tol`` (default ``1e-12 * (1 + ||grad f(x0)||)``).
    Problems with a closed-form minimizer return it directly. No restarts.
    """
    exact = problem.minimizer()
    if exact is not None:
        return exact
    if problem.constants.convexity_class == "nonconvex":
        warnings.warn("problem is not known to be convex; returning a stationary point", RuntimeWarning)
    x = np.zeros(problem.d) if x0 is None else as_vector(x0, problem.d)
    g = problem.gradient(x)
    if tol is None:
        tol = 1e-12 * (1.0 + float(np.linalg.norm(g)))
    if np.linalg.norm(g) <= tol:
        return x
    L = problem.constants.L
    mu = problem.constants.mu
    y, x_prev = x.copy(), x.copy()
    beta_sc = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu)) if mu > 0 else None
    a = 1.0
    evals = 1
    gy = g
    while evals < max_grad_evals:
        x = y - gy / L
        gx = problem.gradient(x)
        evals += 1
        if np.linalg.norm(gx) <= tol:
            return x
        if beta_sc is not None:
            beta = beta_sc
        else:
            a_next = 0.5 * (1 + math.sqrt(1 + 4 * a * a))
            beta = (a - 1) / a_next
            a = a_next
        y = x + beta * (x - x_prev)
        x_prev = x
        gy = problem.gradient(y)
        evals += 1
    raise ConvergenceError(f"reference solver exceeded {max_grad_evals} gradient evaluations before tol={tol:g}")
