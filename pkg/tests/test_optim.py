import pickle
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from reshuffle import analysis
from reshuffle.core import make_cosine_quadratic, make_logistic, make_quadratic
from reshuffle.optim import (
    DivergenceError,
    RunConfig,
    StepSchedule,
    default_k0,
    run,
    run_ensemble,
    run_epoch,
    solve_reference,
    step_size,
)
from reshuffle.shuffle import OrderingScheme

METHODS = ("RR", "SO", "IG", "SGD-iid", "SGD-window")


def test_step_size_examples():
    s = StepSchedule.capped_inverse(1.0, 0.1, 100)
    assert step_size(s, 50) == 1.0
    assert step_size(s, 150) == pytest.approx(0.6, abs=1e-15)
    assert step_size(StepSchedule.constant(0.01), 12345) == 0.01
    assert step_size(StepSchedule.capped_inverse(1.0, 0.1, 0, c=2.0), 40) == pytest.approx(0.5)
    assert default_k0(100, 40) == 100
    with pytest.raises(ValueError):
        StepSchedule("constant")
    with pytest.raises(ValueError):
        step_size(StepSchedule.constant(0.1), -1)


def test_run_epoch_examples():
    p = make_quadratic([0, 2])
    seen = []
    out = run_epoch(p, np.zeros(1), [0, 1], StepSchedule.constant(0.5), recorder=lambda i, x: seen.append(float(x[0])))
    assert seen == [0.0, 1.0] and out.tolist() == [1.0]
    seen.clear()
    out = run_epoch(p, np.zeros(1), [1, 0], StepSchedule.constant(0.5), recorder=lambda i, x: seen.append(float(x[0])))
    assert seen == [1.0, 0.5] and out.tolist() == [0.5]
    x = np.array([0.3])
    assert run_epoch(p, x, [0, 1], StepSchedule.constant(0.0)).tolist() == [0.3]


def test_divergence_signal():
    p = make_quadratic([0, 1])
    cfg = RunConfig("IG", StepSchedule.constant(1e155), 50, x0=[1.0])
    with pytest.raises(DivergenceError) as e, np.errstate(over="ignore", invalid="ignore"):
        run(cfg, p)
    err = e.value
    assert err.step == err.epoch * 2 + err.inner
    assert np.all(np.isfinite(err.last_finite))
    assert err.partial.T == err.epoch
    again = pickle.loads(pickle.dumps(err))
    assert again.step == err.step and again.partial.T == err.partial.T


@pytest.mark.parametrize("problem", [make_quadratic([2.5], [1.7]), make_cosine_quadratic([[0.3, -1.0]])], ids=["quad", "cos"])
def test_n1_methods_equal_gradient_descent(problem):
    gamma = 0.3
    x = np.ones(problem.d)
    gd = [x.copy()]
    for _ in range(15):
        x = x - gamma * problem.gradient(x)
        gd.append(x.copy())
    gd = np.array(gd)
    for m in METHODS:
        tr = run(RunConfig(m, StepSchedule.constant(gamma), 15, seed=9, x0=np.ones(problem.d)), problem)
        assert np.array_equal(tr.epoch_iterates, gd), m


def test_reproducibility_and_so_invariance():
    p = make_quadratic(np.random.default_rng(1).standard_normal((6, 2)))
    cfg = RunConfig("RR", StepSchedule.constant(0.1), 10, seed=42, record_orderings=True)
    a, b = run(cfg, p), run(cfg, p)
    assert np.array_equal(a.epoch_iterates, b.epoch_iterates)
    assert all(np.array_equal(x, y) for x, y in zip(a.orderings, b.orderings))
    assert len({tuple(o) for o in a.orderings}) > 1

    so = run(replace(cfg, method="SO"), p)
    assert all(np.array_equal(o, so.orderings[0]) for o in so.orderings)
    assert tuple(so.orderings[0]) == so.base

    ig1 = run(replace(cfg, method="IG"), p)
    ig2 = run(replace(cfg, method="IG", seed=7), p)
    assert np.array_equal(ig1.epoch_iterates, ig2.epoch_iterates)
    assert all(o.tolist() == list(range(6)) for o in ig1.orderings)


def test_inner_recording_and_thinning():
    p = make_quadratic([0, 1, 2, 3, 4])
    tr = run(RunConfig("RR", StepSchedule.constant(0.1), 4, record_inner=True), p)
    for t in range(4):
        assert np.array_equal(tr.epoch_inner(t)[-1], tr.epoch_iterates[t + 1])
        assert np.array_equal(tr.epoch_inner(t)[0], tr.epoch_iterates[t])
    thin = run(RunConfig("RR", StepSchedule.constant(0.1), 4, record_inner=True, record_every=2), p)
    assert thin.inner_steps.tolist() == [0, 2, 4, 5]
    assert np.array_equal(thin.inner_iterates[1][1], tr.inner_iterates[1][2])
    with pytest.raises(ValueError):
        run(RunConfig("RR", StepSchedule.constant(0.1), 1), p).epoch_inner(0)


def test_translation_equivariance():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((5, 3))
    c = np.array([0.5, -2.0, 4.0])
    for m in ("RR", "SO", "IG", "SGD-iid"):
        cfg = RunConfig(m, StepSchedule.constant(0.2), 6, seed=3, x0=np.zeros(3))
        a = run(cfg, make_quadratic(B))
        b = run(replace(cfg, x0=c), make_quadratic(B + c))
        assert np.allclose(b.epoch_iterates - c, a.epoch_iterates, atol=1e-13)


def test_zero_variance_contracts_strictly():
    p = make_quadratic([[1.0, 2.0]] * 4)
    tr = run(RunConfig("RR", StepSchedule.constant(0.5), 40, x0=[10.0, -3.0]), p)
    d = np.linalg.norm(tr.epoch_iterates - p.minimizer(), axis=1)
    for a, b in zip(d, d[1:]):
        if a < 1e-15:
            break
        assert b < a


def test_minibatch_runs():
    rng = np.random.default_rng(4)
    A = sp.csr_matrix(rng.standard_normal((10, 3)))
    y = (rng.random(10) < 0.5).astype(float)
    p = make_logistic(A, y, 0.1)
    from reshuffle.data import group_minibatches

    g = p.regroup(group_minibatches(10, 4).groups)
    for m in METHODS:
        tr = run(RunConfig(m, StepSchedule.constant(0.05), 3, seed=1, record_orderings=True), g)
        assert tr.epoch_iterates.shape == (4, 3) and np.all(np.isfinite(tr.epoch_iterates))
    rr = run(RunConfig("RR", StepSchedule.constant(0.05), 3, seed=1, record_orderings=True), g)
    assert all(len(o) == 10 for o in rr.orderings)


def test_ensemble_seed_order_and_workers():
    p = make_quadratic([0, 3, 6])
    cfg = RunConfig("RR", StepSchedule.constant(0.1), 5)
    a = run_ensemble(cfg, p, [3, 1, 2])
    assert [t.seed for t in a] == [3, 1, 2]
    b = run_ensemble(cfg, p, [3, 1, 2], workers=2)
    assert all(np.array_equal(x.epoch_iterates, y.epoch_iterates) for x, y in zip(a, b))


def test_solve_reference():
    p = make_quadratic([0, 3, 6])
    assert solve_reference(p).tolist() == [3.0]
    q = make_logistic(sp.csr_matrix([[1.0, 0.5], [-0.3, 2.0]]), [1, 0], 0.1)
    x = solve_reference(q, tol=1e-10)
    assert np.linalg.norm(q.gradient(x)) <= 1e-10
    x2 = solve_reference(q, tol=1e-10, x0=x)
    assert np.array_equal(x, x2)
    from reshuffle.core import ConvergenceError

    with pytest.raises(ConvergenceError):
        solve_reference(q, tol=1e-300, x0=[5.0, 5.0], max_grad_evals=50)


def test_descent_inequality_on_recorded_runs():
    rng = np.random.default_rng(8)
    problems = [make_quadratic(rng.standard_normal((4, 2)), [0.5, 1, 1.5, 2]), make_cosine_quadratic(rng.standard_normal((5, 2)))]
    for p in problems:
        gamma = 1.0 / (p.constants.L * p.n)
        for m in ("RR", "SO", "IG"):
            for s in range(5):
                tr = run(RunConfig(m, StepSchedule.constant(gamma), 10, seed=s, x0=rng.standard_normal(2) * 3, record_inner=True), p)
                assert analysis.descent_violations(p, tr, gamma) == []
    sgd = run(RunConfig("SGD-iid", StepSchedule.constant(0.1), 2, record_inner=True), problems[0])
    with pytest.raises(analysis.PreconditionError):
        analysis.descent_violations(problems[0], sgd, 0.1)
