"""Config-driven experiments: trajectories, variance sweeps and bound checks."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import analysis
from ..core import Problem, make_cosine_quadratic, make_logistic, make_quadratic, with_constants
from ..data import default_regularizer, group_minibatches, load_libsvm, synthetic_logistic
from ..optim import DivergenceError, RunConfig, StepSchedule, default_k0, run, run_ensemble, solve_reference
from .config import ConfigError, ExperimentConfig
from .csvio import TRAJECTORY_COLUMNS, serialize_rows
from .plots import SUMMARY_COLUMNS, render_summary_png, render_sweep_png

log = logging.getLogger("reshuffle")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

SWEEP_COLUMNS = ("tau", "gamma", "sigma_star_sq", "sigma_shuffle_est", "ci", "prop1_lower", "prop1_upper")
DISTRIBUTION_COLUMNS = ("tau", "gamma", "sample", "value")
CHECK_COLUMNS = ("theorem_id", "method", "gamma", "runs", "rhs", "observed", "ci_halfwidth", "slack", "pass", "note")


@dataclass
class ExperimentResult:
    exit_code: int
    files: list


def resolve_threads(flag: Optional[int] = None, config: Optional[int] = None) -> int:
    for v in (flag, config, os.environ.get("RESHUFFLE_THREADS")):
        if v not in (None, ""):
            n = int(v)
            if n < 1:
                raise ConfigError("thread count must be positive")
            return n
    return 1


# ---------------------------------------------------------------------------
# problems


def build_problem(table: dict, tau: int = 1) -> Problem:
    """Problem from a ``[problem]`` table, grouped into size-``tau`` minibatches."""
    kind = table["kind"]
    if kind in ("quadratic", "cosine"):
        if "centers" in table:
            centers = np.array(table["centers"], dtype=float)
        elif "n" in table:
            rng = np.random.default_rng(int(table.get("seed", 0)))
            centers = float(table.get("scale", 1.0)) * rng.standard_normal((int(table["n"]), int(table.get("d", 1))))
        else:
            raise ConfigError(f"{kind} problem needs centers or n")
        if kind == "quadratic":
            p = make_quadratic(centers, table.get("curvatures"))
        else:
            p = make_cosine_quadratic(centers)
    elif kind == "logistic":
        if "path" in table:
            ds = load_libsvm(table["path"], d=table.get("d"))
        elif "N" in table:
            ds = synthetic_logistic(int(table["N"]), int(table.get("d", 10)), int(table.get("seed", 0)), float(table.get("density", 1.0)))
        else:
            raise ConfigError("logistic problem needs path or N")
        lam = table.get("lam")
        if lam is None:
            L_data = make_logistic(ds.features, ds.labels, 0.0).constants.L_f
            lam = default_regularizer(L_data, ds.N)
        p = make_logistic(ds.features, ds.labels, float(lam))
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    if "pl_mu" in table:
        p = with_constants(p, pl_mu=float(table["pl_mu"]))
    if tau > 1:
        p = p.regroup(group_minibatches(p.n_samples, tau).groups)
    return p


def build_schedule(table: dict, problem: Problem, method: str, epochs: int) -> StepSchedule:
    kind = table.get("kind", "constant")
    if kind == "constant":
        if "gamma" not in table:
            raise ConfigError("constant schedule needs gamma")
        return StepSchedule.constant(float(table["gamma"]))
    if kind == "capped-inverse":
        c = problem.constants
        mu = c.strong_convexity
        if not mu > 0:
            raise ConfigError("capped-inverse schedule needs a strongly convex problem")
        k0 = int(table.get("k0", default_k0(problem.n, epochs)))
        return StepSchedule.capped_inverse(c.L, mu, k0, float(table.get("c", 2.0 if method.startswith("SGD") else 3.0)))
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _x0(cfg: ExperimentConfig, d: int):
    if cfg.x0 is None:
        return None
    x = np.atleast_1d(np.array(cfg.x0, dtype=float))
    return np.full(d, x[0]) if x.size == 1 else x


def _reference(problem: Problem):
    if problem.constants.convexity_class in ("nonconvex", "pl"):
        return None
    return solve_reference(problem)


# ---------------------------------------------------------------------------
# trajectories


def _metrics(problem, x, x_star):
    g = problem.gradient(x)
    dist = None if x_star is None else float(np.sum((x - x_star) ** 2))
    return problem.value(x), dist, float(g @ g)


def trajectory_rows(problem: Problem, traj, x_star, diverged: Optional[DivergenceError] = None) -> list[dict]:
    n = problem.n
    rows = []
    for t in range(traj.T + 1):
        inner = [0]
        if traj.inner_iterates is not None and t < traj.T:
            inner = [int(i) for i in traj.inner_steps if i < n]
        for i in inner:
            x = traj.epoch_iterates[t] if i == 0 else traj.inner_iterates[t][list(traj.inner_steps).index(i)]
            k = t * n + i
            f, dist, g2 = _metrics(problem, x, x_star)
            rows.append({
                "method": traj.method, "seed": traj.seed, "epoch": t, "inner_step": i, "global_step": k,
                "gamma": float(traj.gammas[k]) if k < len(traj.gammas) else None,
                "f_value": f, "dist_sq": dist, "grad_norm_sq": g2,
            })
    if diverged is not None:
        inf = math.inf
        rows.append({
            "method": traj.method, "seed": traj.seed, "epoch": diverged.epoch, "inner_step": diverged.inner + 1,
            "global_step": diverged.step + 1, "gamma": float(traj.gammas[diverged.step]),
            "f_value": inf, "dist_sq": inf if x_star is not None else None, "grad_norm_sq": inf,
        })
    return rows


def _ci(v: np.ndarray) -> float:
    return analysis._ci(v)


def summary_rows(method: str, problem: Problem, trajs, x_star) -> list[dict]:
    rows = []
    T = min(tr.T for tr in trajs)
    for t in range(T + 1):
        M = np.array([_metrics(problem, tr.epoch_iterates[t], x_star)[::2] for tr in trajs])
        row = {"method": method, "epoch": t, "runs": len(trajs),
               "f_mean": float(M[:, 0].mean()), "f_ci": _ci(M[:, 0]),
               "grad_norm_sq_mean": float(M[:, 1].mean()), "grad_norm_sq_ci": _ci(M[:, 1])}
        if x_star is not None:
            D = np.array([np.sum((tr.epoch_iterates[t] - x_star) ** 2) for tr in trajs])
            row.update(dist_sq_mean=float(D.mean()), dist_sq_ci=_ci(D))
        rows.append(row)
    return rows


def _run_method(cfg, problem, method, workers):
    schedule = build_schedule(cfg.schedule, problem, method, cfg.epochs)
    rc = RunConfig(
        method, schedule, int(cfg.epochs), x0=_x0(cfg, problem.d),
        record_inner=bool(cfg.record.get("inner", False)), record_every=int(cfg.record.get("every", 1)),
    )
    trajs, failures = [], []
    # runs are independent; failures are collected per seed so the rest still land on disk
    try:
        trajs = run_ensemble(rc, problem, cfg.seeds, workers=workers)
    except DivergenceError:
        from dataclasses import replace

        for s in cfg.seeds:
            try:
                trajs.append(run(replace(rc, seed=int(s)), problem))
            except DivergenceError as e:
                failures.append(e)
                trajs.append(None)
    return trajs, failures


def run_trajectories(cfg: ExperimentConfig, problem: Problem, out: Path, workers: int) -> ExperimentResult:
    x_star = _reference(problem)
    files, summary, code = [], [], EXIT_OK
    for method in cfg.methods:
        trajs, failures = _run_method(cfg, problem, method, workers)
        rows = []
        fail_iter = iter(failures)
        ok = []
        for tr in trajs:
            if tr is None:
                e = next(fail_iter)
                rows += trajectory_rows(problem, e.partial, x_star, diverged=e)
                log.warning("%s seed %d diverged: %s", method, e.partial.seed, e)
                code = EXIT_DIVERGED
            else:
                rows += trajectory_rows(problem, tr, x_star)
                ok.append(tr)
        path = out / f"trajectory_{method}.csv"
        path.write_text(serialize_rows(rows), encoding="utf-8")
        files.append(path)
        if ok:
            summary += summary_rows(method, problem, ok, x_star)
    spath = out / "summary.csv"
    spath.write_text(serialize_rows(summary, SUMMARY_COLUMNS), encoding="utf-8")
    files.append(spath)
    if summary:
        files.append(render_summary_png(spath, out / "summary.png"))
    return ExperimentResult(code, files)


# ---------------------------------------------------------------------------
# variance sweep


def _gamma_grid(sweep: dict, L: float) -> list[float]:
    if "gammas" in sweep:
        grid = [float(g) for g in sweep["gammas"]]
    else:
        k = int(sweep.get("num_gammas", 9))
        lo = float(sweep.get("gamma_min_factor", 1e-4))
        grid = list(np.geomspace(1.0 / L, lo / L, k)) if k > 0 else []
    if not grid:
        raise ConfigError("variance sweep grid is empty")
    return grid


def variance_sweep(cfg: ExperimentConfig, out: Optional[Path] = None) -> list[dict]:
    """Rows ``(tau, gamma, sigma_star_sq, sigma_shuffle_est, ci, prop1_lower, prop1_upper)``.

    Sweeps ``gamma`` on a geometric grid (default ``1/L`` down to ``1e-4/L``)
    or ``tau`` over ``sweep.taus`` at fixed ``sweep.gamma``. With ``out``
    the rows are written to ``variance_sweep.csv``, plus an empirical
    distribution CSV when ``distribution_samples`` is positive.
    """
    sw = cfg.sweep
    over = sw.get("over", "gamma")
    num_perms = sw.get("num_perms", 10_000)
    seed = int(sw.get("seed", 0))
    dist_n = int(sw.get("distribution_samples", 0))
    if over == "gamma":
        cells = [(int(cfg.tau), None)]
    elif over == "tau":
        taus = [int(t) for t in sw.get("taus", [])]
        if not taus:
            raise ConfigError("variance sweep grid is empty")
        cells = [(t, None) for t in taus]
    else:
        raise ConfigError(f"sweep.over must be 'gamma' or 'tau', got {over!r}")

    base = build_problem(cfg.problem, 1)
    x_star = solve_reference(base)
    rows, dist_rows = [], []
    for tau, _ in cells:
        problem = base if tau == 1 else base.regroup(group_minibatches(base.n_samples, tau).groups)
        gammas = _gamma_grid(sw, problem.constants.L) if over == "gamma" else [float(sw.get("gamma", cfg.schedule.get("gamma", 0.1)))]
        for g in gammas:
            rep = analysis.sigma_shuffle_sq(problem, x_star, g, num_perms=num_perms, seed=seed)
            rows.append({"tau": tau, "gamma": float(g), "sigma_star_sq": rep.sigma_star_sq,
                         "sigma_shuffle_est": rep.sigma_shuffle_sq, "ci": rep.ci_halfwidth,
                         "prop1_lower": rep.prop1_lower, "prop1_upper": rep.prop1_upper})
            if dist_n > 0:
                vals = analysis.per_permutation_shuffle_values(problem, x_star, g, dist_n, seed)
                dist_rows += [{"tau": tau, "gamma": float(g), "sample": k, "value": float(v)} for k, v in enumerate(vals)]
    if out is not None:
        (out / "variance_sweep.csv").write_text(serialize_rows(rows, SWEEP_COLUMNS), encoding="utf-8")
        if dist_rows:
            (out / "variance_distribution.csv").write_text(serialize_rows(dist_rows, DISTRIBUTION_COLUMNS), encoding="utf-8")
        render_sweep_png(rows, out / "variance_sweep.png")
    return rows


# ---------------------------------------------------------------------------
# bound checks


def run_bound_checks(cfg: ExperimentConfig, problem: Problem, out: Path, workers: int) -> ExperimentResult:
    ch = cfg.check
    theorems = ch.get("theorems", [])
    if not theorems:
        raise ConfigError("[check] needs theorems")
    gamma = float(ch.get("gamma", cfg.schedule.get("gamma", 0) or 0))
    if not gamma > 0:
        raise ConfigError("bound checks need a constant gamma")
    slack = float(ch.get("slack", 0.0))
    x_star = _reference(problem)
    rows, code = [], EXIT_OK
    for thm in theorems:
        if thm not in analysis.THEOREM_IDS:
            raise ConfigError(f"unknown theorem id {thm!r}")
        allowed = analysis._METHODS[thm]
        methods = [m for m in cfg.methods if m in allowed] or [allowed[0]]
        for method in methods:
            seeds = cfg.seeds[:1] if method == "IG" else cfg.seeds
            rc = RunConfig(method, StepSchedule.constant(gamma), int(cfg.epochs), x0=_x0(cfg, problem.d))
            row = {"theorem_id": thm, "method": method, "gamma": gamma, "runs": len(seeds), "slack": slack}
            try:
                trajs = run_ensemble(rc, problem, seeds, workers=workers)
                bc = analysis.check_bound(thm, problem, trajs, gamma, slack=slack, x_star=x_star,
                                          num_perms=ch.get("num_perms", 10_000))
                row.update(rhs=bc.rhs, observed=bc.observed, ci_halfwidth=bc.ci_halfwidth, **{"pass": bc.passed})
                if "conditional_pass" in bc.details:
                    row["note"] = f"per-permutation {'pass' if bc.details['conditional_pass'] else 'fail'}"
            except analysis.PreconditionError as e:
                row.update(**{"pass": False}, note=f"refused: {e}")
            except DivergenceError as e:
                row.update(**{"pass": False}, note=f"diverged: {e}")
            if not row["pass"]:
                code = EXIT_CHECK_FAILED
            rows.append(row)
    path = out / "bound_checks.csv"
    path.write_text(serialize_rows(rows, CHECK_COLUMNS), encoding="utf-8")
    return ExperimentResult(code, [path])


# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out: Optional[Path] = None, threads: Optional[int] = None) -> ExperimentResult:
    """Run ``cfg`` and write its artifacts under ``out`` (default ``cfg.out``).

    The exit code is 0 on success, 1 if a bound check fails or is refused
    and 3 if a run diverged (the CSV then ends that run with an ``inf`` row).
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_threads(threads, cfg.threads)
    if cfg.mode == "variance-sweep":
        variance_sweep(cfg, out)
        files = sorted(out.glob("variance_*"))
        return ExperimentResult(EXIT_OK, files)
    problem = build_problem(cfg.problem, int(cfg.tau))
    if cfg.mode == "bound-check":
        return run_bound_checks(cfg, problem, out, workers)
    return run_trajectories(cfg, problem, out, workers)
