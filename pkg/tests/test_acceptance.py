"""Acceptance suite: ten criteria, each printing one PASS/FAIL line.

Oracles are independent of the code under test wherever one exists:
itertools enumeration for without-replacement variances, the
unit-curvature closed form for the shuffling variance, and explicit
recomputation of every bound's right-hand side.
"""
import io
import itertools
import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

from reshuffle import analysis as an
from reshuffle.cli import parse_rows, serialize_rows
from reshuffle.core import GenericProblem, ProblemConstants, make_cosine_quadratic, make_logistic, make_quadratic
from reshuffle.data import Dataset, group_minibatches, parse_libsvm, serialize_libsvm
from reshuffle.optim import RunConfig, StepSchedule, run, run_ensemble, solve_reference
from reshuffle.shuffle import wor_mean_and_variance

SEEDS = range(2000)
Z = an.Z95


def ensemble(method, problem, gamma, T, x0, seeds=SEEDS, **kw):
    return run_ensemble(RunConfig(method, StepSchedule.constant(gamma), T, x0=np.asarray(x0, float), **kw), problem, seeds)


def unit_family():
    # random unit-curvature quadratics, n <= 8 and d <= 4
    rng = np.random.default_rng(2024)
    return [(make_quadratic(2.0 * rng.standard_normal((n, d))), 3.0 * rng.standard_normal(d)) for n, d in ((3, 1), (5, 2), (8, 4))]


def test_c1_without_replacement_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        X = rng.standard_normal((n, int(rng.integers(1, 4))))
        mean = X.mean(axis=0)
        sigma2 = np.mean(np.sum((X - mean) ** 2, axis=1))
        perms = list(itertools.permutations(range(n)))
        for k in range(1, n + 1):
            exact = np.mean([np.sum((X[list(p[:k])].mean(axis=0) - mean) ** 2) for p in perms])
            closed = (n - k) / (k * (n - 1)) * sigma2
            worst = max(worst, abs(closed - exact), abs(wor_mean_and_variance(X, k).predicted_variance - exact))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    assert report(1, "without-replacement variance", ok, f"max err {worst:.2e}, {elapsed:.2f}s")


def test_c2_shuffling_variance_exactness(report):
    t0 = time.perf_counter()
    p = make_quadratic([0, 3, 6])
    errs, inside = [], True
    for gamma in (0.2, 0.1, 0.01):
        rep = an.sigma_shuffle_sq(p, [3.0], gamma)
        errs.append(abs(rep.sigma_shuffle_sq - 3 * gamma))
        lo, hi = an.prop1_bounds(gamma, 1.0, 1.0, 3, an.sigma_star_sq(p, [3.0]))
        inside &= abs(lo - 2.25 * gamma) <= 1e-12 and abs(hi - 4.5 * gamma) <= 1e-12
        inside &= lo <= rep.sigma_shuffle_sq <= hi and rep.in_sandwich
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-12 and inside and elapsed < 1
    assert report(2, "shuffling variance = 3*gamma", ok, f"max err {max(errs):.1e}, sandwich {inside}, {elapsed:.2f}s")


def test_c3_theorem1_ensembles(report):
    t0 = time.perf_counter()
    rows = []
    for (p, x0), gamma in zip(unit_family(), (1.0, 0.5, 0.1)):
        x_star = p.minimizer()
        sh = an.sigma_shuffle_sq(p, x_star, gamma).sigma_shuffle_sq
        r0 = float(np.sum((x0 - x_star) ** 2))
        # unit curvature: mu = L = 1
        rhs = (1 - gamma) ** (p.n * 30) * r0 + 2 * gamma * sh
        for m in ("RR", "SO"):
            trs = ensemble(m, p, gamma, 30, x0)
            chk = an.check_bound("thm1", p, trs, gamma, x_star=x_star)
            d = np.array([np.sum((t.final() - x_star) ** 2) for t in trs])
            ci = Z * d.std(ddof=1) / math.sqrt(d.size)
            rows.append(abs(chk.rhs - rhs) <= 1e-12 * rhs and d.mean() <= rhs + ci and chk.passed)
    elapsed = time.perf_counter() - t0
    ok = all(rows) and elapsed < 60
    assert report(3, "theorem-1 ensembles", ok, f"{sum(rows)}/{len(rows)} configurations, {elapsed:.1f}s")


def test_c4_theorem2_and_3_ensembles(report):
    t0 = time.perf_counter()
    rows = []
    for p, x0 in unit_family():
        n, x_star = p.n, p.minimizer()
        gamma = 1 / (math.sqrt(2) * n)
        s_star = float(np.mean(np.sum((p.centers - x_star) ** 2, axis=1)))
        r0 = float(np.sum((x0 - x_star) ** 2))
        T = 30
        rhs2 = (1 - gamma * n / 2) ** T * r0 + gamma ** 2 * n * s_star
        rhs3 = r0 / (2 * gamma * n * T) + gamma ** 2 * n * s_star / 4
        f_star = p.value(x_star)
        for m in ("RR", "SO"):
            trs = ensemble(m, p, gamma, T, x0)
            dist = np.array([np.sum((t.final() - x_star) ** 2) for t in trs])
            gap = np.array([p.value(t.epoch_iterates[1:].mean(axis=0)) - f_star for t in trs])
            c2 = an.check_bound("thm2", p, trs, gamma, x_star=x_star)
            c3 = an.check_bound("thm3", p, trs, gamma, x_star=x_star)
            rows.append(dist.mean() <= rhs2 + Z * dist.std(ddof=1) / math.sqrt(dist.size) and c2.passed
                        and abs(c2.rhs - rhs2) <= 1e-12 * rhs2)
            rows.append(gap.mean() <= rhs3 + Z * gap.std(ddof=1) / math.sqrt(gap.size) and c3.passed
                        and abs(c3.rhs - rhs3) <= 1e-12 * rhs3)
    elapsed = time.perf_counter() - t0
    ok = all(rows) and elapsed < 60
    assert report(4, "theorem-2/3 ensembles", ok, f"{sum(rows)}/{len(rows)} checks, {elapsed:.1f}s")


def test_c5_theorem4_nonconvex(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    rows = []
    for n in (3, 6):
        p = make_cosine_quadratic(rng.standard_normal((n, 1)) * 2)
        L = p.constants.L
        gamma = 1 / (2 * L * n)
        T = 40
        x0 = np.array([4.0])
        x_ref = solve_reference(p, tol=1e-12)
        trs = ensemble("RR", p, gamma, T, x0)
        X = np.stack([t.epoch_iterates for t in trs])[..., 0]  # (runs, T + 1)
        b = p.centers[:, 0]
        # component gradients (x - b) - sin(x - b), written out independently
        R = X[..., None] - b
        comp = R - np.sin(R)
        full = comp.mean(axis=-1)
        # B^2 with A = 0: largest gradient variance over the visited set
        B2 = float(((comp - full[..., None]) ** 2).mean(axis=-1).max())
        rhs = 12 * (p.value(x0) - p.value(x_ref)) / (gamma * n * T) + 2 * gamma ** 2 * L ** 2 * n * B2
        G = full[:, :T] ** 2
        k = int(np.argmin(G.mean(axis=0)))
        ci = Z * G[:, k].std(ddof=1) / math.sqrt(len(trs))
        chk = an.check_bound("thm4-nc", p, trs, gamma, x_star=x_ref)
        rows.append(G[:, k].mean() <= rhs + ci and chk.passed and abs(chk.rhs - rhs) <= 1e-9 * rhs)
    elapsed = time.perf_counter() - t0
    ok = all(rows) and elapsed < 120
    assert report(5, "theorem-4 nonconvex", ok, f"{sum(rows)}/{len(rows)} configurations, {elapsed:.1f}s")


def test_c6_incremental_gradient(report):
    t0 = time.perf_counter()
    rows = []
    for p, x0 in unit_family():
        n, x_star = p.n, p.minimizer()
        caps = {"thm5-ig-sc": 1.0, "thm5-ig-fsc": 1 / (math.sqrt(2) * n), "thm5-ig-cvx": 1 / (math.sqrt(2) * n),
                "thm5-ig-nc": 1 / (math.sqrt(8) * n)}
        for tid, gamma in caps.items():
            tr = run(RunConfig("IG", StepSchedule.constant(gamma), 30, x0=x0), p)
            chk = an.check_bound(tid, p, [tr], gamma, x_star=x_star)
            rows.append(chk.observed < chk.rhs and chk.ci_halfwidth == 0)
    elapsed = time.perf_counter() - t0
    ok = all(rows) and elapsed < 10
    assert report(6, "incremental-gradient bounds (strict)", ok, f"{sum(rows)}/{len(rows)} checks, {elapsed:.2f}s")


def _nonconvex_generic(centers):
    # 1/2||x - b||^2 + 2 sum cos(x - b): Hessian eigenvalues in [-1, 3]
    B = np.asarray(centers, float)
    return GenericProblem(
        len(B), B.shape[1],
        lambda i, x: float(0.5 * np.sum((x - B[i]) ** 2) + 2 * np.sum(np.cos(x - B[i]))),
        lambda i, x: (x - B[i]) - 2 * np.sin(x - B[i]),
        ProblemConstants(L=3.0, convexity_class="nonconvex"),
    )


def test_c7_epoch_descent(report):
    rng = np.random.default_rng(7)
    A = sp.csr_matrix(rng.standard_normal((8, 3)))
    y = (rng.random(8) < 0.5).astype(float)
    suites = {
        "quadratic": make_quadratic(rng.standard_normal((5, 2)), [0.5, 1.0, 1.5, 2.0, 3.0]),
        "logistic": make_logistic(A, y, 0.1),
        "cosine": make_cosine_quadratic(rng.standard_normal((6, 2)) * 2),
        "nonconvex": _nonconvex_generic(rng.standard_normal((5, 2)) * 2),
    }
    epochs = violations = 0
    for p in suites.values():
        gamma = 1 / (p.constants.L * p.n)
        for m in ("RR", "SO", "IG"):
            for s in range(10):
                tr = run(RunConfig(m, StepSchedule.constant(gamma), 25, seed=s, x0=rng.standard_normal(p.d) * 4, record_inner=True), p)
                violations += len(an.descent_violations(p, tr, gamma, rel_tol=1e-9))
                epochs += tr.T
    assert report(7, "deterministic epoch descent", violations == 0, f"{violations} violations over {epochs} epochs")


def test_c8_limit_point_tracking(report):
    p = make_quadratic([0, 3, 6])
    gamma, i = 0.05, p.n // 2
    trs = ensemble("RR", p, gamma, 60, [0.0], record_inner=True, record_orderings=True)
    track, raw = an.limit_point_distances(p, trs, [3.0], gamma)
    # independent recomputation of the limit points at position i
    G = np.array([3.0, 0.0, -3.0])
    t = 55
    lim = np.array([3.0 - gamma * G[np.array(tr.orderings[t][:i])].sum() for tr in trs])
    xi = np.array([tr.inner_iterates[t][i][0] for tr in trs])
    assert np.allclose(track[:, t, i], (xi - lim) ** 2, rtol=1e-12, atol=1e-300)
    sep = []
    for t in range(50, 60):
        a, b = track[:, t, i], raw[:, t, i]
        ca = Z * a.std(ddof=1) / math.sqrt(a.size)
        cb = Z * b.std(ddof=1) / math.sqrt(b.size)
        sep.append(a.mean() + ca < b.mean() - cb)
    ok = all(sep)
    assert report(8, "limit-point tracking", ok, f"separated at {sum(sep)}/{len(sep)} epochs, "
                  f"t=59: {track[:, 59, i].mean():.2e} vs {raw[:, 59, i].mean():.2e}")


def test_c9_variance_crossover_and_scaling(report):
    rng = np.random.default_rng(9)
    N = 256
    base = make_quadratic(rng.standard_normal((N, 2)))
    x_star = base.minimizer()

    # crossover over a gamma sweep at tau = 1
    s_star = an.sigma_star_sq(base, x_star)
    gammas = 10.0 ** (-np.arange(13) / 3)
    ratio = np.array([an.sigma_shuffle_sq(base, x_star, g, num_perms=2000, seed=1).sigma_shuffle_sq / s_star for g in gammas])
    below = ratio < 1
    k = int(np.argmax(below))
    threshold = gammas[k]
    clean = below.any() and not below[:k].any() and below[k:].all()
    # unit curvature gives a closed-form crossover
    g_c = 2 * (N - 1) / max(j * (N - j) for j in range(1, N))
    brackets = threshold <= g_c and (k == 0 or gammas[k - 1] > g_c)

    taus = np.array([1, 2, 4, 8, 16])
    sh, ss = [], []
    for tau in taus:
        p = base.regroup(group_minibatches(N, int(tau)).groups)
        rep = an.sigma_shuffle_sq(p, x_star, 0.01, num_perms=2000, seed=2)
        sh.append(rep.sigma_shuffle_sq)
        ss.append(rep.sigma_star_sq)
    slope_sh = np.polyfit(np.log(taus), np.log(sh), 1)[0]
    slope_ss = np.polyfit(np.log(taus), np.log(ss), 1)[0]
    ok = clean and brackets and slope_sh <= -1.7 and -1.3 <= slope_ss <= -0.7
    assert report(9, "variance crossover and minibatch scaling", ok,
                  f"threshold {threshold:.3g} (closed form {g_c:.3g}), slopes {slope_sh:.2f} / {slope_ss:.2f}")


def test_c10_method_identities(report):
    t0 = time.perf_counter()
    checks = []
    p1 = make_quadratic([[2.5, -1.0]], [1.7])
    trs = [run(RunConfig(m, StepSchedule.constant(0.3), 20, seed=5, x0=[1.0, 1.0]), p1)
           for m in ("RR", "SO", "IG", "SGD-iid", "SGD-window")]
    x = np.array([1.0, 1.0])
    gd = [x]
    for _ in range(20):
        x = x - 0.3 * (1.7 * (x - np.array([2.5, -1.0])))
        gd.append(x)
    checks.append(all(np.array_equal(t.epoch_iterates, np.array(gd)) for t in trs))

    p = make_quadratic(np.random.default_rng(10).standard_normal((6, 2)))
    so = run(RunConfig("SO", StepSchedule.constant(0.1), 15, seed=3, record_orderings=True), p)
    checks.append(all(np.array_equal(o, so.orderings[0]) for o in so.orderings))
    cfg = RunConfig("RR", StepSchedule.constant(0.1), 15, seed=3, record_orderings=True)
    a, b = run(cfg, p), run(cfg, p)
    checks.append(np.array_equal(a.epoch_iterates, b.epoch_iterates)
                  and all(np.array_equal(u, v) for u, v in zip(a.orderings, b.orderings)))

    rng = np.random.default_rng(11)
    M = sp.random(7, 5, density=0.4, random_state=12, format="csr")
    ds = Dataset(M, (rng.random(7) < 0.5).astype(float))
    back = parse_libsvm(io.StringIO(serialize_libsvm(ds)), d=5)
    checks.append((back.features != ds.features).nnz == 0 and np.array_equal(back.labels, ds.labels))
    rows = [{"method": "RR", "seed": s, "epoch": s, "inner_step": 0, "global_step": 3 * s, "gamma": 0.1 / (s + 1),
             "f_value": float(v), "dist_sq": None if s == 2 else float(v) ** 2, "grad_norm_sq": math.inf if s == 3 else 0.0}
            for s, v in enumerate(rng.standard_normal(5))]
    checks.append(parse_rows(serialize_rows(rows)) == rows)
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 5
    assert report(10, "method identities and round-trips", ok, f"{sum(checks)}/{len(checks)} properties, {elapsed:.2f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
