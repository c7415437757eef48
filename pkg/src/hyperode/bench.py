"""Benchmark sweeps: accuracy-vs-cost pareto rows and minimal-step speedup
tables against the adaptive reference solver.

Counts are measured, never estimated: every sweep cell runs with private
counters and cross-checks them against the p*K (+K corrector) accounting
identities. Wall-times are medians of repeated runs with a discarded
warmup, reported in nanoseconds, and are never part of pass/fail logic.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dopri5 import ground_truth_trajectory, solve_dopri5
from .errors import MetricError, NumericError
from .hypersolver import Hypersolver, hyper_solve
from .metrics import mape_report, mlp_macs
from .solvers import ButcherTableau, VectorField, solve_fixed

BENCH_TRUTH_TOL = 1e-7
TIMING_RUNS = 5
K_SEARCH_MAX = 10_000


def solver_name(solver) -> str:
    if isinstance(solver, Hypersolver):
        return f"hyper-{solver.base.name}"
    return solver.name


def _solver_stages(solver) -> int:
    return solver.base.stages if isinstance(solver, Hypersolver) else solver.stages


def _run(solver, f, z0, span, K):
    if isinstance(solver, Hypersolver):
        return hyper_solve(solver, f, z0, span, K)
    return solve_fixed(solver, f, z0, span, K)


def _median_walltime_ns(fn, runs: int = TIMING_RUNS) -> int:
    fn()  # warmup, discarded
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(np.median(samples))


@dataclass
class ParetoRow:
    solver: str
    K: int
    eps: float
    nfe_f: int  # dynamics evaluations per trajectory
    nfe_g: int  # corrector evaluations per trajectory
    macs: int  # K * (stages*mac_f + mac_g)
    mape: float  # mean over IC seeds, percent
    global_err: float  # mean terminal Euclidean error over IC seeds
    walltime_ns: int
    failed: bool = False


def _pareto_cell(solver, problem, K, ic_seeds, span, truths):
    name = solver_name(solver)
    stages = _solver_stages(solver)
    mac_f = problem.field.mac_per_eval
    if mac_f is None:
        raise MetricError(f"field {problem.field.name} has no mac_per_eval")
    if isinstance(solver, Hypersolver):
        # private counter per cell; the network is shared read-only
        solver = Hypersolver(base=solver.base, g=solver.g, include_s=solver.include_s)
        mac_g = mlp_macs(solver.g)
    else:
        mac_g = 0
    eps = (span[1] - span[0]) / K

    try:
        mapes, gerrs = [], []
        for seed in ic_seeds:
            truth = truths[(K, seed)]
            f_run = problem.field.clone()
            if isinstance(solver, Hypersolver):
                solver.reset_nfe()
            traj = _run(solver, f_run, truth.states[0], span, K)
            if f_run.nfe != stages * K:
                raise MetricError(f"NFE {f_run.nfe} != {stages}*{K} for {name}")
            if isinstance(solver, Hypersolver) and solver.corrector_nfe != K:
                raise MetricError(f"corrector NFE {solver.corrector_nfe} != {K}")
            mapes.append(mape_report(traj, truth)[0])
            gerrs.append(float(np.linalg.norm(traj.terminal - truth.terminal)))
        ic0 = truths[(K, ic_seeds[0])].states[0]
        wall = _median_walltime_ns(lambda: _run(solver, problem.field.clone(), ic0, span, K))
        return ParetoRow(
            solver=name, K=K, eps=eps,
            nfe_f=stages * K,
            nfe_g=K if isinstance(solver, Hypersolver) else 0,
            macs=K * (stages * mac_f + mac_g),
            mape=float(np.mean(mapes)),
            global_err=float(np.mean(gerrs)),
            walltime_ns=wall,
        )
    except NumericError:
        return ParetoRow(solver=name, K=K, eps=eps, nfe_f=0, nfe_g=0,
                         macs=K * (stages * mac_f + mac_g),
                         mape=float("nan"), global_err=float("nan"),
                         walltime_ns=0, failed=True)


def pareto_sweep(solvers, problem, K_grid, ic_seeds, span=None, jobs: int = 1):
    """One ParetoRow per (solver, K): metrics averaged across IC seeds
    against segment-restarted reference truth. A failing cell yields a
    flagged row; the sweep continues. Rows come back sorted by MACs."""
    span = span or problem.span_default
    ic_seeds = list(ic_seeds)
    truths = {}
    for K in K_grid:
        for seed in ic_seeds:
            truths[(K, seed)] = ground_truth_trajectory(
                problem.field.clone(), problem.sample_ic(seed), span, K,
                BENCH_TRUTH_TOL, BENCH_TRUTH_TOL)

    cells = [(solver, K) for solver in solvers for K in K_grid]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(
                lambda cell: _pareto_cell(cell[0], problem, cell[1], ic_seeds, span, truths),
                cells))
    else:
        rows = [_pareto_cell(solver, problem, K, ic_seeds, span, truths)
                for solver, K in cells]
    rows.sort(key=lambda r: (r.macs, r.solver, r.K))
    return rows


@dataclass
class SpeedupRow:
    solver: str
    K: int  # smallest step count meeting the budget (dopri5: accepted steps)
    nfe_f: int
    mape: float  # mean MAPE at that K, percent
    walltime_ns: int
    speedup: float  # reference walltime / this walltime
    reachable: bool = True


def speedup_table(solvers, problem, accuracy_budget: float, ic_seeds,
                  span=None, K_max: int = K_SEARCH_MAX):
    """Smallest K per solver with mean terminal MAPE within the budget
    (percent, against the adaptive reference), plus wall-time speedups.
    The reference solver itself is the first row, speedup exactly 1."""
    span = span or problem.span_default
    ic_seeds = list(ic_seeds)
    ics = [problem.sample_ic(seed) for seed in ic_seeds]

    ref_results = [solve_dopri5(problem.field.clone(), ic, span,
                                BENCH_TRUTH_TOL, BENCH_TRUTH_TOL) for ic in ics]
    ref_finals = [r.final for r in ref_results]

    def mean_mape_at(solver, K):
        vals = []
        for ic, ref in zip(ics, ref_finals):
            try:
                traj = _run(solver, problem.field.clone(), ic, span, K)
            except NumericError:
                return float("inf")  # a blown-up run never meets a budget
            mask = ref != 0.0
            if not np.any(mask):
                raise MetricError("reference terminal identically zero")
            vals.append(float(np.mean(
                np.abs(traj.terminal[mask] - ref[mask]) / np.abs(ref[mask])) * 100.0))
        return float(np.mean(vals))

    ref_wall = _median_walltime_ns(
        lambda: solve_dopri5(problem.field.clone(), ics[0], span,
                             BENCH_TRUTH_TOL, BENCH_TRUTH_TOL))
    rows = [SpeedupRow(solver="dopri5", K=ref_results[0].accepted,
                       nfe_f=ref_results[0].nfe, mape=0.0,
                       walltime_ns=ref_wall, speedup=1.0)]

    for solver in solvers:
        if isinstance(solver, Hypersolver):
            solver = Hypersolver(base=solver.base, g=solver.g, include_s=solver.include_s)
        name = solver_name(solver)
        stages = _solver_stages(solver)

        # exponential probe, then bisect the bracket for the smallest K
        hit = None
        K = 1
        while K <= K_max:
            if math.isinf(accuracy_budget) or mean_mape_at(solver, K) <= accuracy_budget:
                hit = K
                break
            K *= 2
        if hit is None and K // 2 < K_max:
            if mean_mape_at(solver, K_max) <= accuracy_budget:
                hit = K_max
        if hit is None:
            rows.append(SpeedupRow(solver=name, K=K_max, nfe_f=0, mape=float("nan"),
                                   walltime_ns=0, speedup=float("nan"), reachable=False))
            continue
        lo, hi = hit // 2 + 1, hit
        while lo < hi:
            mid = (lo + hi) // 2
            if mean_mape_at(solver, mid) <= accuracy_budget:
                hi = mid
            else:
                lo = mid + 1
        K_min = hi
        wall = _median_walltime_ns(
            lambda: _run(solver, problem.field.clone(), ics[0], span, K_min))
        rows.append(SpeedupRow(solver=name, K=K_min, nfe_f=stages * K_min,
                               mape=mean_mape_at(solver, K_min),
                               walltime_ns=wall,
                               speedup=ref_wall / wall if wall > 0 else float("inf")))
    return rows


# --- CSV / manifest output ---------------------------------------------------

PARETO_HEADER = "solver,K,eps,nfe_f,nfe_g,macs,mape,global_err,walltime_ns"
SPEEDUP_HEADER = "solver,K,nfe_f,mape,walltime_ns,speedup"


def write_pareto_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(PARETO_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.solver},{r.K},{r.eps:.17g},{r.nfe_f},{r.nfe_g},{r.macs},"
                     f"{r.mape:.17g},{r.global_err:.17g},{r.walltime_ns}\n")


def write_speedup_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(SPEEDUP_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.solver},{r.K},{r.nfe_f},{r.mape:.17g},"
                     f"{r.walltime_ns},{r.speedup:.17g}\n")


def write_manifest(path, problem_name: str, ic_seeds, extra: dict | None = None):
    doc = {
        "problem": problem_name,
        "seeds": list(ic_seeds),
        "tolerances": {"truth_atol": BENCH_TRUTH_TOL, "truth_rtol": BENCH_TRUTH_TOL},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
