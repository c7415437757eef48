"""Explicit fixed-step Runge-Kutta machinery.

Butcher tableaus (with the second-order alpha family), vector fields with
exact NFE accounting, uniform-mesh trajectories, and the stepping loop.
Tableaus fully determine a method: stages r_i = f(s + c_i*eps, z +
eps*sum_j a_ij r_j), update z_next = z + eps * sum_j b_j r_j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, NumericError, RangeError, SingularParameterError

MESH_RTOL = 1e-12


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an explicit RK method. a must be strictly lower
    triangular; b sums to 1 and each row sum of a equals the node c_i."""

    name: str
    order: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        p = len(b)
        if a.shape != (p, p) or c.shape != (p,):
            raise ValueError(f"tableau {self.name}: inconsistent shapes a{a.shape} b({p},) c{c.shape}")
        if self.order < 1:
            raise ValueError(f"tableau {self.name}: order must be >= 1")
        if np.any(np.triu(a) != 0.0):
            raise ValueError(f"tableau {self.name}: a is not strictly lower triangular")
        if c[0] != 0.0:
            raise ValueError(f"tableau {self.name}: c[0] must be 0")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ValueError(f"tableau {self.name}: sum(b) = {b.sum()!r} != 1")
        if np.max(np.abs(a.sum(axis=1) - c)) > 1e-12:
            raise ValueError(f"tableau {self.name}: row sums of a do not match c")

    @property
    def stages(self) -> int:
        return len(self.b)


def tableau_euler() -> ButcherTableau:
    return ButcherTableau("euler", 1, a=[[0.0]], b=[1.0], c=[0.0])


def tableau_midpoint() -> ButcherTableau:
    return ButcherTableau("midpoint", 2, a=[[0.0, 0.0], [0.5, 0.0]], b=[0.0, 1.0], c=[0.0, 0.5])


def tableau_heun() -> ButcherTableau:
    return ButcherTableau("heun", 2, a=[[0.0, 0.0], [1.0, 0.0]], b=[0.5, 0.5], c=[0.0, 1.0])


def tableau_rk4() -> ButcherTableau:
    return ButcherTableau(
        "rk4",
        4,
        a=[[0.0, 0.0, 0.0, 0.0],
           [0.5, 0.0, 0.0, 0.0],
           [0.0, 0.5, 0.0, 0.0],
           [0.0, 0.0, 1.0, 0.0]],
        b=[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        c=[0.0, 0.5, 0.5, 1.0],
    )


def tableau_alpha(alpha: float) -> ButcherTableau:
    """Second-order two-stage family: alpha=0.5 is midpoint, alpha=1 is Heun."""
    if alpha == 0.0:
        raise SingularParameterError("alpha family is singular at alpha = 0")
    w = 1.0 / (2.0 * alpha)
    return ButcherTableau(
        f"alpha{alpha:g}", 2,
        a=[[0.0, 0.0], [alpha, 0.0]],
        b=[1.0 - w, w],
        c=[0.0, alpha],
    )


NAMED_TABLEAUS = {
    "euler": tableau_euler,
    "midpoint": tableau_midpoint,
    "heun": tableau_heun,
    "rk4": tableau_rk4,
}


class VectorField:
    """Callable dynamics f(s, z) -> dz with an exact evaluation counter.

    Counters are instance state: concurrent solves must each use their own
    clone(). mac_per_eval is the nominal multiply-accumulate cost of one
    evaluation, used for benchmark accounting.
    """

    def __init__(self, dynamics, dim: int, name: str = "field",
                 exact_solution=None, mac_per_eval: int | None = None):
        self.dynamics = dynamics
        self.dim = int(dim)
        self.name = name
        self.exact_solution = exact_solution
        self.mac_per_eval = mac_per_eval
        self.nfe = 0

    def __call__(self, s: float, z) -> np.ndarray:
        self.nfe += 1
        return np.asarray(self.dynamics(s, z), dtype=float)

    def reset_nfe(self):
        self.nfe = 0

    def clone(self) -> "VectorField":
        return VectorField(self.dynamics, self.dim, self.name,
                           self.exact_solution, self.mac_per_eval)


@dataclass
class Trajectory:
    """States on a uniform mesh; row 0 is the initial condition."""

    s_mesh: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.s_mesh = np.asarray(self.s_mesh, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.s_mesh.ndim != 1 or self.states.ndim != 2:
            raise MeshError("s_mesh must be 1-d and states 2-d")
        if len(self.s_mesh) != len(self.states):
            raise MeshError(f"{len(self.s_mesh)} mesh points but {len(self.states)} state rows")
        if len(self.s_mesh) < 2:
            raise MeshError("trajectory needs at least 2 mesh points")
        diffs = np.diff(self.s_mesh)
        span = self.s_mesh[-1] - self.s_mesh[0]
        if span <= 0.0:
            raise MeshError("mesh must be increasing")
        if np.max(np.abs(diffs - diffs[0])) > MESH_RTOL * abs(span):
            raise MeshError("mesh spacing is not uniform")

    @property
    def K(self) -> int:
        return len(self.s_mesh) - 1

    @property
    def eps(self) -> float:
        return (self.s_mesh[-1] - self.s_mesh[0]) / self.K

    @property
    def span(self):
        return (float(self.s_mesh[0]), float(self.s_mesh[-1]))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def _stages(tab: ButcherTableau, f: VectorField, s: float, z, eps: float,
            first_stage=None):
    """Stage slopes r_1..r_p. Passing first_stage skips the stage-1
    evaluation (valid because c[0] = 0 for every explicit tableau here)."""
    rs = []
    for i in range(tab.stages):
        if i == 0 and first_stage is not None:
            r = first_stage
        else:
            zi = z
            for j in range(i):
                aij = tab.a[i, j]
                if aij != 0.0:
                    zi = zi + eps * aij * rs[j]
            r = f(s + tab.c[i] * eps, zi)
        if not np.all(np.isfinite(r)):
            raise NumericError(f"non-finite stage value in {tab.name}", s=float(s), stage=i + 1)
        rs.append(r)
    return rs


def rk_step(tab: ButcherTableau, f: VectorField, s: float, z, eps: float):
    """One explicit RK step. Returns (psi, z_next) with z_next = z + eps*psi."""
    z = np.asarray(z, dtype=float)
    if eps <= 0.0:
        raise RangeError(f"eps must be positive, got {eps}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite state passed to rk_step", s=float(s))
    rs = _stages(tab, f, s, z, eps)
    psi = tab.b[0] * rs[0]
    for j in range(1, tab.stages):
        if tab.b[j] != 0.0:
            psi = psi + tab.b[j] * rs[j]
    return psi, z + eps * psi


def solve_fixed(tab: ButcherTableau, f: VectorField, z0, span, K: int) -> Trajectory:
    """Integrate on a uniform K-step mesh over span. Consumes exactly
    tab.stages * K dynamics evaluations."""
    s0, s1 = float(span[0]), float(span[1])
    if K < 1:
        raise MeshError(f"K must be >= 1, got {K}")
    if s1 <= s0:
        raise RangeError(f"span must be increasing, got {span}")
    z0 = np.asarray(z0, dtype=float)
    eps = (s1 - s0) / K
    s_mesh = s0 + np.arange(K + 1) * eps
    states = np.empty((K + 1, z0.size))
    states[0] = z0
    z = z0
    for k in range(K):
        try:
            _, z = rk_step(tab, f, s_mesh[k], z, eps)
        except NumericError as err:
            err.step = k
            raise
        states[k + 1] = z
    return Trajectory(s_mesh=s_mesh, states=states)


# --- persistence ------------------------------------------------------------
# CSV: header s,z0,...,z{n-1}; 17 significant digits per value. A JSON
# manifest with the same stem records provenance.

def _manifest_path(csv_path):
    from pathlib import Path

    return Path(csv_path).with_suffix(".json")


def save_trajectory(traj: Trajectory, csv_path, *, problem: str = "",
                    solver: str = "", seed: int | None = None,
                    nfe: int | None = None):
    cols = ["s"] + [f"z{i}" for i in range(traj.dim)]
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s, row in zip(traj.s_mesh, traj.states):
            fh.write(",".join(f"{v:.17g}" for v in [s, *row]) + "\n")
    manifest = {
        "problem": problem,
        "solver": solver,
        "K": traj.K,
        "span": list(traj.span),
        "seed": seed,
        "nfe": nfe,
    }
    with open(_manifest_path(csv_path), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_trajectory(csv_path) -> Trajectory:
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "s":
            raise MeshError(f"{csv_path}: not a trajectory CSV")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    data = np.array(rows)
    return Trajectory(s_mesh=data[:, 0], states=data[:, 1:])
