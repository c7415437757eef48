"""Error metrics, cost accounting, and convergence-order estimation.

Local error e_k is the defect of one step started from the true state;
global error E_k the distance to truth at mesh point k; terminal MAPE the
percentage error of the final state with exact-zero truth components
excluded. Costs are tracked two ways: NFE (dynamics evaluations) and MAC
counts (architecture-aware, sum of out*in over layers per evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dopri5 import ground_truth_trajectory
from .errors import MeshError, MetricError, RangeError
from .hypersolver import Hypersolver, hyper_solve, hyper_step
from .nn import Mlp
from .solvers import ButcherTableau, Trajectory, VectorField, rk_step, solve_fixed

ERROR_FLOOR = 1e-13  # below this, terminal errors are fp noise, not signal
SELF_ORACLE_TOL = 1e-9


def mlp_macs(net: Mlp) -> int:
    """Multiply-accumulates of one forward pass: sum of out*in per layer."""
    return int(sum(w.shape[0] * w.shape[1] for w in net.weights))


def _step_for(solver, f, s, z, eps):
    if isinstance(solver, Hypersolver):
        return hyper_step(solver, f, s, z, eps)
    return rk_step(solver, f, s, z, eps)[1]


def local_errors(solver, f: VectorField, truth: Trajectory) -> np.ndarray:
    """e_k for each step: one (corrected) step from the true state z(s_k)
    against z(s_{k+1}). Accepts a tableau or a hypersolver."""
    eps = truth.eps
    out = np.empty(truth.K)
    for k in range(truth.K):
        stepped = _step_for(solver, f, float(truth.s_mesh[k]), truth.states[k], eps)
        out[k] = np.linalg.norm(truth.states[k + 1] - stepped)
    return out


def global_errors(traj: Trajectory, truth: Trajectory) -> np.ndarray:
    """Per-mesh-point Euclidean distance between a run and the truth."""
    if traj.states.shape != truth.states.shape:
        raise MeshError(f"shape mismatch {traj.states.shape} vs {truth.states.shape}")
    if np.max(np.abs(traj.s_mesh - truth.s_mesh)) > 1e-12 * max(abs(truth.span[1]), 1.0):
        raise MeshError("meshes do not coincide")
    return np.linalg.norm(traj.states - truth.states, axis=1)


def mape_report(traj: Trajectory, truth: Trajectory):
    """(terminal MAPE in percent, number of excluded components).

    Components whose true terminal value is exactly zero are excluded from
    the mean; a percentage against a zero denominator would be fabricated.
    """
    t = truth.terminal
    z = traj.terminal
    if t.shape != z.shape:
        raise MeshError(f"terminal shape mismatch {z.shape} vs {t.shape}")
    mask = t != 0.0
    excluded = int(np.sum(~mask))
    if not np.any(mask):
        raise MetricError("terminal truth is identically zero; MAPE undefined")
    value = float(np.mean(np.abs(z[mask] - t[mask]) / np.abs(t[mask])) * 100.0)
    return value, excluded


def mape(traj: Trajectory, truth: Trajectory) -> float:
    return mape_report(traj, truth)[0]


def relative_overhead(p: int, mac_f: int, mac_g: int) -> float:
    """Cost multiplier of correcting a p-th order method: 1 + mac_g/(p*mac_f)."""
    if p < 1 or mac_f <= 0 or mac_g < 0:
        raise RangeError(f"need p >= 1, mac_f > 0, mac_g >= 0; got {(p, mac_f, mac_g)}")
    return 1.0 + mac_g / (p * mac_f)


@dataclass
class ErrorReport:
    e_k: np.ndarray
    E_k: np.ndarray
    terminal_mape: float
    mape_excluded: int
    nfe_dynamics: int
    nfe_corrector: int
    mac_f: int
    mac_g: int


def error_report(solver, f: VectorField, truth: Trajectory) -> ErrorReport:
    """Full per-trajectory report for one solver on one ground truth.
    NFEs are measured on private clones, never estimated."""
    if f.mac_per_eval is None:
        raise MetricError(f"field {f.name} has no mac_per_eval")
    f_run = f.clone()
    if isinstance(solver, Hypersolver):
        solver.reset_nfe()
        traj = hyper_solve(solver, f_run, truth.states[0], truth.span, truth.K)
        nfe_g = solver.corrector_nfe
        mac_g = mlp_macs(solver.g)
    else:
        traj = solve_fixed(solver, f_run, truth.states[0], truth.span, truth.K)
        nfe_g = 0
        mac_g = 0
    value, excluded = mape_report(traj, truth)
    return ErrorReport(
        e_k=local_errors(solver, f.clone(), truth),
        E_k=global_errors(traj, truth),
        terminal_mape=value,
        mape_excluded=excluded,
        nfe_dynamics=f_run.nfe,
        nfe_corrector=nfe_g,
        mac_f=f.mac_per_eval,
        mac_g=mac_g,
    )


@dataclass
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    truncated: bool  # grid points dropped for falling under the error floor


def order_slope(solver, problem, eps_grid) -> OrderFit:
    """Least-squares slope of log terminal-global-error vs log step size.

    Grid points whose error underflows the fp floor are dropped; with
    fewer than two left the fit is reported as degenerate rather than
    inventing a slope. The solver may be a tableau, a hypersolver, or a
    callable (f, z0, span, K) -> Trajectory.
    """
    span = problem.span_default
    width = span[1] - span[0]
    z0 = problem.sample_ic(0)
    logs_e, logs_err = [], []
    dropped = 0
    for eps in sorted(np.asarray(eps_grid, dtype=float), reverse=True):
        if eps <= 0.0 or eps > width:
            raise RangeError(f"eps {eps} outside (0, {width}]")
        K = max(1, round(width / eps))
        eps_actual = width / K
        if problem.has_exact:
            t_mesh = span[0] + np.arange(K + 1) * eps_actual
            states = np.array([problem.field.exact_solution(s, z0) for s in t_mesh])
            truth = Trajectory(s_mesh=t_mesh, states=states)
        else:
            truth = ground_truth_trajectory(problem.field.clone(), z0, span, K,
                                            SELF_ORACLE_TOL, SELF_ORACLE_TOL)
        if isinstance(solver, Hypersolver):
            traj = hyper_solve(solver, problem.field.clone(), z0, span, K)
        elif isinstance(solver, ButcherTableau):
            traj = solve_fixed(solver, problem.field.clone(), z0, span, K)
        else:
            traj = solver(problem.field.clone(), z0, span, K)
        err = float(np.linalg.norm(traj.terminal - truth.terminal))
        if err < ERROR_FLOOR:
            dropped += 1
            continue
        logs_e.append(np.log(eps_actual))
        logs_err.append(np.log(err))

    if len(logs_e) < 2:
        return OrderFit(slope=float("nan"), intercept=float("nan"),
                        r_squared=float("nan"), n_used=len(logs_e),
                        truncated=dropped > 0)
    x = np.array(logs_e)
    y = np.array(logs_err)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(slope=float(slope), intercept=float(intercept), r_squared=r2,
                    n_used=len(logs_e), truncated=dropped > 0)
