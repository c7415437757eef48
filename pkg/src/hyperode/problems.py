"""Bundled test dynamics.

Linear fields carry closed-form matrix-exponential oracles, Van der Pol is
the nonlinear stressor (reference = tight-tolerance adaptive solve), and
seeded random tanh MLPs stand in for learned dynamics. All default to the
unit integration interval.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, RangeError
from .nn import Mlp, mlp_forward, mlp_init
from .solvers import VectorField

DEFAULT_SPAN = (0.0, 1.0)
DEFAULT_MLP_HIDDEN = 16

# field magnitude target for random MLPs: sup ||f|| over the IC box is
# rescaled to this once at construction
MLP_FIELD_SCALE = 1.0
MLP_SCALE_PROBES = 1024


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    field: VectorField
    ic_sampler: object  # (seed) -> initial condition vector
    span_default: tuple
    has_exact: bool
    net: Mlp | None = None  # populated for random-MLP fields only

    def sample_ic(self, seed: int) -> np.ndarray:
        return np.asarray(self.ic_sampler(seed), dtype=float)


def _box_sampler(low, high):
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)

    def sample(seed):
        rng = np.random.default_rng(seed)
        return rng.uniform(low, high)

    return sample


def problem_linear(lambda_matrix, name: str | None = None,
                   ic_box=None) -> ProblemSpec:
    """Autonomous linear field dz = M z with exact flow exp(s*M) z0."""
    M = np.atleast_2d(np.asarray(lambda_matrix, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"lambda_matrix must be square, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise RangeError("lambda_matrix must be finite")
    n = M.shape[0]

    if n == 1:
        lam = float(M[0, 0])

        def exact(s, z0):
            return np.asarray(z0, dtype=float) * math.exp(lam * s)
    else:

        def exact(s, z0):
            return expm(s * M) @ np.asarray(z0, dtype=float)

    field = VectorField(lambda s, z: M @ z, dim=n, name=name or f"linear{n}",
                        exact_solution=exact, mac_per_eval=n * n)
    if ic_box is None:
        ic_box = (np.full(n, 0.5), np.full(n, 1.5))
    return ProblemSpec(
        name=field.name, dim=n, field=field,
        ic_sampler=_box_sampler(*ic_box),
        span_default=DEFAULT_SPAN, has_exact=True,
    )


def problem_vdp(mu: float) -> ProblemSpec:
    """Van der Pol oscillator; mildly stiff for larger mu. No closed form:
    the reference is the adaptive solver at 1e-9 tolerances."""
    if mu < 0.0:
        raise RangeError(f"mu must be >= 0, got {mu}")

    def dyn(s, z):
        return np.array([z[1], mu * (1.0 - z[0] * z[0]) * z[1] - z[0]])

    field = VectorField(dyn, dim=2, name=f"vdp{mu:g}", mac_per_eval=4)
    return ProblemSpec(
        name=field.name, dim=2, field=field,
        ic_sampler=_box_sampler([1.5, -0.5], [2.5, 0.5]),
        span_default=DEFAULT_SPAN, has_exact=False,
    )


def problem_random_mlp(dim: int, hidden: int = DEFAULT_MLP_HIDDEN,
                       seed: int = 0) -> ProblemSpec:
    """Seeded tanh MLP field [dim -> hidden -> dim] on the box [-1,1]^dim.

    Biases are drawn uniformly in [-0.5, 0.5] so the field has no special
    structure at the origin, then the output layer is rescaled once so that
    sup ||f|| over a fixed 1024-point probe of the box equals 1.
    """
    if dim < 1:
        raise DimensionError(f"dim must be >= 1, got {dim}")
    if hidden < dim:
        raise DimensionError(f"hidden ({hidden}) must be >= dim ({dim})")

    net = mlp_init([dim, hidden, dim], activation="tanh", seed=seed)
    bias_rng = np.random.default_rng([seed, 7])
    for b in net.biases:
        b[:] = bias_rng.uniform(-0.5, 0.5, size=b.shape)

    probe_rng = np.random.default_rng([seed, 113])
    probes = probe_rng.uniform(-1.0, 1.0, size=(MLP_SCALE_PROBES, dim))
    sup = max(float(np.linalg.norm(mlp_forward(net, p))) for p in probes)
    factor = MLP_FIELD_SCALE / sup
    net.weights[-1] *= factor
    net.biases[-1] *= factor

    mac = dim * hidden + hidden * dim
    field = VectorField(lambda s, z: mlp_forward(net, np.asarray(z, dtype=float)),
                        dim=dim, name=f"mlp-d{dim}-s{seed}", mac_per_eval=mac)
    return ProblemSpec(
        name=field.name, dim=dim, field=field,
        ic_sampler=_box_sampler(np.full(dim, -1.0), np.full(dim, 1.0)),
        span_default=DEFAULT_SPAN, has_exact=False, net=net,
    )


# --- registry ---------------------------------------------------------------

_MLP_NAME = re.compile(r"^mlp-d(\d+)-s(\d+)$")


def get_problem(name: str) -> ProblemSpec:
    """Resolve a CLI problem name: linear1, rotation2, vdp<mu>, mlp-d<dim>-s<seed>."""
    if name == "linear1":
        return problem_linear([[1.0]], name="linear1")
    if name == "rotation2":
        return problem_linear([[0.0, -1.0], [1.0, 0.0]], name="rotation2",
                              ic_box=(np.full(2, -1.0), np.full(2, 1.0)))
    if name.startswith("vdp"):
        try:
            mu = float(name[3:])
        except ValueError:
            raise KeyError(f"bad Van der Pol problem name {name!r}") from None
        return problem_vdp(mu)
    m = _MLP_NAME.match(name)
    if m:
        return problem_random_mlp(dim=int(m.group(1)), seed=int(m.group(2)))
    raise KeyError(
        f"unknown problem {name!r}; expected linear1, rotation2, "
        f"vdp<mu>, or mlp-d<dim>-s<seed>"
    )


def list_problems():
    return ["linear1", "rotation2", "vdp1", "mlp-d{dim}-s{seed}"]
