"""Adaptive Dormand-Prince 5(4) with FSAL, used as the reference solver.

Controller: scaled RMS error estimate err = ||(z5 - z4)/(atol +
rtol*max(|z|,|z_next|))||_rms, accept iff err <= 1, step factor
0.9*err^(-1/5) clamped to [0.2, 10]. Initial step is 1e-2 of the span and
the last step is truncated to land exactly on s1. The counter on the
VectorField reports actual evaluations: 1 + 6 per attempted step (the
seventh stage is reused as stage one of the next accepted step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, RangeError, StiffnessError
from .solvers import Trajectory, VectorField

# stage nodes and coefficients of the 5(4) pair
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                  187 / 2100, 1 / 40])

SAFETY = 0.9
FACTOR_MIN = 0.2
FACTOR_MAX = 10.0
ORDER_EXP = 1.0 / 5.0
H_INIT_FRAC = 1e-2
H_UNDERFLOW_FRAC = 1e-14
MAX_ATTEMPTS = 1_000_000


@dataclass
class Dopri5Result:
    final: np.ndarray
    s_points: np.ndarray  # accepted mesh incl. endpoints
    z_points: np.ndarray  # states at s_points
    nfe: int
    accepted: int
    rejected: int
    error_estimates: np.ndarray  # scaled err of each accepted step, all <= 1


def solve_dopri5(f: VectorField, z0, span, atol: float = 1e-7,
                 rtol: float = 1e-7) -> Dopri5Result:
    s0, s1 = float(span[0]), float(span[1])
    if s1 <= s0:
        raise RangeError(f"span must be increasing, got {span}")
    if atol <= 0.0 or rtol <= 0.0:
        raise RangeError("atol and rtol must be positive")
    z = np.asarray(z0, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite initial state", s=s0)

    width = s1 - s0
    h = H_INIT_FRAC * width
    h_floor = H_UNDERFLOW_FRAC * width

    nfe0 = f.nfe
    s = s0
    k1 = f(s, z)
    ss, zs, errs = [s], [z.copy()], []
    accepted = rejected = 0

    for _ in range(MAX_ATTEMPTS):
        if s >= s1:
            break
        h = min(h, s1 - s)
        if h < h_floor:
            raise StiffnessError(f"step size underflow at s={s:.6g} (h={h:.3e})", s=s)

        ks = [k1]
        for i in range(1, 7):
            zi = z + h * sum(a * ks[j] for j, a in enumerate(DP_A[i]) if a != 0.0)
            ks.append(f(s + DP_C[i] * h, zi))
        z5 = z + h * sum(b * k for b, k in zip(DP_B5, ks) if b != 0.0)
        z4 = z + h * sum(b * k for b, k in zip(DP_B4, ks))
        if not (np.all(np.isfinite(z5)) and np.all(np.isfinite(z4))):
            raise NumericError("non-finite state in dopri5 step", s=s)

        scale = atol + rtol * np.maximum(np.abs(z), np.abs(z5))
        err = float(np.sqrt(np.mean(((z5 - z4) / scale) ** 2)))

        if err <= 1.0:
            s = s1 if s1 - s <= h * (1 + 1e-12) else s + h
            z = z5
            k1 = ks[6]  # FSAL: last stage was evaluated at (s+h, z5)
            ss.append(s)
            zs.append(z.copy())
            errs.append(err)
            accepted += 1
        else:
            rejected += 1

        factor = FACTOR_MAX if err == 0.0 else SAFETY * err ** (-ORDER_EXP)
        h = h * min(FACTOR_MAX, max(FACTOR_MIN, factor))
    else:
        raise NumericError(f"dopri5 exceeded {MAX_ATTEMPTS} step attempts", s=s)

    return Dopri5Result(
        final=z,
        s_points=np.array(ss),
        z_points=np.array(zs),
        nfe=f.nfe - nfe0,
        accepted=accepted,
        rejected=rejected,
        error_estimates=np.array(errs),
    )


def ground_truth_trajectory(f: VectorField, z0, span, K: int,
                            atol: float = 1e-7, rtol: float = 1e-7) -> Trajectory:
    """Reference states on a uniform K-step mesh. Each segment [s_k, s_{k+1}]
    is re-solved from the previous checkpoint, so every checkpoint carries
    solver-tolerance error rather than interpolation error."""
    s0, s1 = float(span[0]), float(span[1])
    eps = (s1 - s0) / K
    s_mesh = s0 + np.arange(K + 1) * eps
    states = np.empty((K + 1, np.size(z0)))
    states[0] = np.asarray(z0, dtype=float)
    for k in range(K):
        res = solve_dopri5(f, states[k], (s_mesh[k], s_mesh[k] + eps), atol, rtol)
        states[k + 1] = res.final
    return Trajectory(s_mesh=s_mesh, states=states)
