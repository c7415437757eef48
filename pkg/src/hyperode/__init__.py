"""Explicit Runge-Kutta solvers with trained correction networks.

A corrector MLP learns the scaled residual a fixed-step method leaves
behind, buying adaptive-solver accuracy at fixed-step cost. The package
bundles the solver family, the corrector training loop, reference problems,
and the benchmark machinery; the `hyperode` CLI drives reproducible runs.
"""

from .dopri5 import Dopri5Result, ground_truth_trajectory, solve_dopri5
from .errors import (
    DimensionError,
    HyperodeError,
    MeshError,
    MetricError,
    NumericError,
    RangeError,
    SingularParameterError,
    StiffnessError,
    TrainingError,
)
from .hypersolver import (
    Hypersolver,
    TrainConfig,
    TrainResult,
    hyper_solve,
    hyper_step,
    load_bundle,
    make_hypersolver,
    param_sensitivity,
    residual_dataset,
    residual_loss,
    save_bundle,
    train,
    trajectory_loss,
)
from .metrics import (
    ErrorReport,
    OrderFit,
    error_report,
    global_errors,
    local_errors,
    mape,
    mape_report,
    mlp_macs,
    order_slope,
    relative_overhead,
)
from .bench import ParetoRow, SpeedupRow, pareto_sweep, speedup_table
from .nn import Mlp, mlp_forward, mlp_init, save_mlp, load_mlp
from .problems import (
    ProblemSpec,
    get_problem,
    list_problems,
    problem_linear,
    problem_random_mlp,
    problem_vdp,
)
from .solvers import (
    ButcherTableau,
    Trajectory,
    VectorField,
    load_trajectory,
    rk_step,
    save_trajectory,
    solve_fixed,
    tableau_alpha,
    tableau_euler,
    tableau_heun,
    tableau_midpoint,
    tableau_rk4,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
