"""Residual-corrected Runge-Kutta stepping and corrector training.

A base explicit method of order p has per-step defect

    R_k = [z(s_{k+1}) - z(s_k) - eps*psi(s_k, z(s_k))] / eps^(p+1)

against the true flow. A small network g is trained to predict R from
(z, f(s,z), eps[, s]); stepping with

    z_{k+1} = z_k + eps*psi + eps^(p+1)*g(...)

then carries local error eps^(p+1)*||R_k - g_k|| exactly, so driving the
residual gap down buys accuracy at fixed step count. The correction
exponent is always base.order + 1 and is never configurable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dopri5 import ground_truth_trajectory
from .errors import DimensionError, NumericError, RangeError, TrainingError
from .nn import (
    CosineSchedule,
    Gradients,
    Mlp,
    OptimizerState,
    cosine_lr,
    load_mlp,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_vjp,
    optimizer_step,
    save_mlp,
)
from .solvers import (
    NAMED_TABLEAUS,
    ButcherTableau,
    Trajectory,
    VectorField,
    _stages,
    tableau_alpha,
)

GROUND_TRUTH_TOL = 1e-7


def corrector_width(n_z: int, include_s: bool = False) -> int:
    """Input width of the corrector: [z, f(s,z), eps] plus optional s."""
    return 2 * n_z + 1 + int(include_s)


@dataclass
class Hypersolver:
    """A base tableau of order p plus the corrector network g.

    The corrector consumes the concatenation [z, f(s,z), eps] (and s when
    include_s is set; off by default). corrector_nfe counts g evaluations
    the way VectorField.nfe counts dynamics evaluations.
    """

    base: ButcherTableau
    g: Mlp
    include_s: bool = False
    corrector_nfe: int = 0

    def __post_init__(self):
        expected = corrector_width(self.g.output_dim, self.include_s)
        if self.g.input_dim != expected:
            raise DimensionError(
                f"corrector input width {self.g.input_dim} != {expected} "
                f"(n_z={self.g.output_dim}, include_s={self.include_s})"
            )

    @property
    def order(self) -> int:
        return self.base.order

    @property
    def n_z(self) -> int:
        return self.g.output_dim

    def reset_nfe(self):
        self.corrector_nfe = 0

    def layout(self, z, f_val, eps: float, s: float) -> np.ndarray:
        parts = [np.asarray(z, dtype=float), np.asarray(f_val, dtype=float), [eps]]
        if self.include_s:
            parts.append([s])
        return np.concatenate(parts)

    def correction(self, z, f_val, eps: float, s: float) -> np.ndarray:
        self.corrector_nfe += 1
        return mlp_forward(self.g, self.layout(z, f_val, eps, s))


def make_hypersolver(base: ButcherTableau, n_z: int, hidden=(32, 32),
                     activation: str = "prelu", include_s: bool = False,
                     seed: int = 0) -> Hypersolver:
    """Fresh hypersolver with an untrained corrector of the right width."""
    dims = [corrector_width(n_z, include_s), *hidden, n_z]
    return Hypersolver(base=base, g=mlp_init(dims, activation, seed=seed),
                       include_s=include_s)


# --- residuals --------------------------------------------------------------

@dataclass
class ResidualRecord:
    s: float
    eps: float
    z: np.ndarray
    f_val: np.ndarray
    R: np.ndarray


@dataclass
class ResidualDataset:
    records: list

    def __len__(self):
        return len(self.records)

    @property
    def eps(self) -> float:
        return self.records[0].eps


def base_residuals(tab: ButcherTableau, f: VectorField, truth: Trajectory):
    """Scaled one-step defects R_k of the base method along a true
    trajectory; the corrector's regression targets."""
    return [rec.R for rec in residual_dataset(tab, f, truth).records]


def residual_dataset(tab: ButcherTableau, f: VectorField, truth: Trajectory) -> ResidualDataset:
    eps = truth.eps
    scale = eps ** (tab.order + 1)
    records = []
    for k in range(truth.K):
        s_k = float(truth.s_mesh[k])
        z_k = truth.states[k]
        f_k = f(s_k, z_k)
        rs = _stages(tab, f, s_k, z_k, eps, first_stage=f_k)
        psi = tab.b[0] * rs[0]
        for j in range(1, tab.stages):
            if tab.b[j] != 0.0:
                psi = psi + tab.b[j] * rs[j]
        R = (truth.states[k + 1] - z_k - eps * psi) / scale
        if not np.all(np.isfinite(R)):
            raise NumericError("non-finite residual", s=s_k, step=k)
        records.append(ResidualRecord(s=s_k, eps=eps, z=z_k, f_val=f_k, R=R))
    return ResidualDataset(records=records)


# --- stepping ---------------------------------------------------------------

def hyper_step(hs: Hypersolver, f: VectorField, s: float, z, eps: float) -> np.ndarray:
    """One corrected step: base update plus eps^(p+1) * g(z, f(s,z), eps).

    The dynamics value fed to g is the stage-1 evaluation (c_1 = 0), so the
    corrector adds no dynamics NFEs: exactly p per step, as for the base.
    """
    z = np.asarray(z, dtype=float)
    if eps <= 0.0:
        raise RangeError(f"eps must be positive, got {eps}")
    if f.dim != hs.n_z:
        raise DimensionError(f"field dim {f.dim} != corrector n_z {hs.n_z}")
    tab = hs.base
    f0 = f(s, z)
    rs = _stages(tab, f, s, z, eps, first_stage=f0)
    psi = tab.b[0] * rs[0]
    for j in range(1, tab.stages):
        if tab.b[j] != 0.0:
            psi = psi + tab.b[j] * rs[j]
    corr = hs.correction(z, f0, eps, s)
    return z + eps * psi + eps ** (tab.order + 1) * corr


def hyper_solve(hs: Hypersolver, f: VectorField, z0, span, K: int) -> Trajectory:
    """Integrate with corrected steps on a uniform K-step mesh.

    Consumes exactly p*K dynamics evaluations and K corrector evaluations.
    """
    from .errors import MeshError

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
            z = hyper_step(hs, f, s_mesh[k], z, eps)
        except NumericError as err:
            err.step = k
            raise
        states[k + 1] = z
    return Trajectory(s_mesh=s_mesh, states=states)


# --- losses -----------------------------------------------------------------

def residual_loss(hs: Hypersolver, ds: ResidualDataset) -> float:
    """Mean Euclidean gap between residuals and corrector outputs."""
    if len(ds) == 0:
        raise RangeError("empty residual dataset")
    total = 0.0
    for rec in ds.records:
        gap = rec.R - hs.correction(rec.z, rec.f_val, rec.eps, rec.s)
        total += float(np.linalg.norm(gap))
    return total / len(ds)


def _residual_loss_grad(hs: Hypersolver, ds: ResidualDataset):
    """(loss, corrector-parameter gradients) for the residual objective.
    True states are constants, so no flow through the solver is needed."""
    grads = Gradients.zeros_like(hs.g)
    total = 0.0
    inv_k = 1.0 / len(ds)
    for rec in ds.records:
        u = hs.layout(rec.z, rec.f_val, rec.eps, rec.s)
        out = mlp_forward(hs.g, u)
        gap = rec.R - out
        norm = float(np.linalg.norm(gap))
        total += norm
        if norm > 0.0:
            upstream = (-inv_k / norm) * gap  # d/d(out) of ||R - out|| / K
            grads.add_(mlp_backward(hs.g, u, upstream))
    return total * inv_k, grads


def trajectory_loss(hs: Hypersolver, f: VectorField, truth: Trajectory) -> float:
    """Summed state error of the fully unrolled corrected trajectory."""
    traj = hyper_solve(hs, f, truth.states[0], truth.span, truth.K)
    diffs = truth.states[1:] - traj.states[1:]
    return float(np.sum(np.linalg.norm(diffs, axis=1)))


def _trajectory_loss_grad(hs: Hypersolver, f: VectorField, truth: Trajectory):
    """(loss, corrector gradients) for the unrolled objective.

    The recursion z_{k+1} = z_k + eps*psi_k + c*g(u_k) is differentiated
    with f frozen: psi_k and the f-slice of u_k are constants, so the only
    z-dependence between steps is the identity plus c * dg/dz on the
    z-slice of u_k. Reverse sweep with one VJP per step.
    """
    tab = hs.base
    eps = truth.eps
    c = eps ** (tab.order + 1)
    K = truth.K
    n_z = hs.n_z

    zs = [np.asarray(truth.states[0], dtype=float)]
    layouts = []
    for k in range(K):
        s_k = float(truth.s_mesh[k])
        z = zs[k]
        f0 = f(s_k, z)
        rs = _stages(tab, f, s_k, z, eps, first_stage=f0)
        psi = tab.b[0] * rs[0]
        for j in range(1, tab.stages):
            if tab.b[j] != 0.0:
                psi = psi + tab.b[j] * rs[j]
        u = hs.layout(z, f0, eps, s_k)
        hs.corrector_nfe += 1
        zs.append(z + eps * psi + c * mlp_forward(hs.g, u))
        layouts.append(u)

    loss = 0.0
    direct = [np.zeros(n_z)]  # dL/dz_k ignoring later steps
    for k in range(1, K + 1):
        diff = zs[k] - truth.states[k]
        norm = float(np.linalg.norm(diff))
        loss += norm
        direct.append(diff / norm if norm > 0.0 else np.zeros(n_z))

    grads = Gradients.zeros_like(hs.g)
    lam = direct[K]
    for k in range(K - 1, -1, -1):
        g_par, g_in = mlp_vjp(hs.g, layouts[k], c * lam)
        grads.add_(g_par)
        if k > 0:
            lam = direct[k] + lam + g_in[:n_z]
    return loss, grads


# --- training ---------------------------------------------------------------

LOSS_KINDS = ("residual", "trajectory", "combined")


@dataclass
class TrainConfig:
    iterations: int = 4000
    lr_max: float = 1e-2
    lr_min: float = 5e-5  # the final-delta contract is sensitive to the end of the anneal
    weight_decay: float = 1e-6
    batch_swap_every: int = 10
    pretrain_iters: int = 10
    loss: str = "residual"
    lam: float = 0.0  # weight of the trajectory term under loss="combined"
    seed: int = 0
    K: int = 10
    span: tuple = (0.0, 1.0)
    batch_size: int = 8
    pool_size: int = 64

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.batch_swap_every < 1:
            raise RangeError("batch_swap_every must be >= 1")
        if not 0 <= self.pretrain_iters <= max(self.iterations, 0):
            raise RangeError("need 0 <= pretrain_iters <= iterations")
        if self.batch_size < 1 or self.pool_size < self.batch_size:
            raise RangeError("need 1 <= batch_size <= pool_size")
        if self.K < 1:
            raise RangeError("K must be >= 1")


@dataclass
class TrainSample:
    field: VectorField
    truth: Trajectory
    dataset: ResidualDataset


@dataclass
class TrainResult:
    hypersolver: Hypersolver
    history: np.ndarray  # per-iteration loss, length = cfg.iterations
    delta: float  # max_k ||R_k - g_k|| over the training pool, post-training


def _as_field_and_sampler(item):
    if hasattr(item, "field") and hasattr(item, "ic_sampler"):
        return item.field, item.ic_sampler
    f, sampler = item
    return f, sampler


def build_training_pool(hs: Hypersolver, problems, cfg: TrainConfig, rng) -> list:
    """Ground-truth trajectories (and residual datasets) the batches draw
    from. One tight adaptive solve per trajectory, segment-restarted on the
    training mesh; generated once, swapping batches is then free."""
    pairs = [_as_field_and_sampler(p) for p in problems]
    pool = []
    for i in range(cfg.pool_size):
        f, sampler = pairs[i % len(pairs)]
        f = f.clone()
        ic = np.asarray(sampler(int(rng.integers(2 ** 31))), dtype=float)
        truth = ground_truth_trajectory(f, ic, cfg.span, cfg.K,
                                        GROUND_TRUTH_TOL, GROUND_TRUTH_TOL)
        pool.append(TrainSample(field=f, truth=truth,
                                dataset=residual_dataset(hs.base, f, truth)))
    return pool


def _batch_loss_grad(hs: Hypersolver, batch, cfg: TrainConfig):
    total = 0.0
    grads = Gradients.zeros_like(hs.g)
    for sample in batch:
        if cfg.loss in ("residual", "combined"):
            l, g = _residual_loss_grad(hs, sample.dataset)
            total += l
            grads.add_(g)
        if cfg.loss == "trajectory" or (cfg.loss == "combined" and cfg.lam != 0.0):
            l, g = _trajectory_loss_grad(hs, sample.field, sample.truth)
            w = 1.0 if cfg.loss == "trajectory" else cfg.lam
            total += w * l
            grads.add_(g.scale_(w))
    n = len(batch)
    return total / n, grads.scale_(1.0 / n)


def pool_delta(hs: Hypersolver, pool) -> float:
    """Worst residual gap max_k ||R_k - g_k|| across all pool records."""
    worst = 0.0
    for sample in pool:
        for rec in sample.dataset.records:
            gap = rec.R - mlp_forward(hs.g, hs.layout(rec.z, rec.f_val, rec.eps, rec.s))
            worst = max(worst, float(np.linalg.norm(gap)))
    return worst


def train(hs: Hypersolver, problems, cfg: TrainConfig) -> TrainResult:
    """Fit the corrector in place and return it with the loss history.

    Two phases: pretrain_iters on one fixed batch, then a fresh batch from
    the pool every batch_swap_every iterations. AdamW with cosine-annealed
    learning rate. Only g's parameters move; dynamics and true states are
    constants throughout.
    """
    ss = np.random.SeedSequence(cfg.seed)
    pool_rng, batch_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    pool = build_training_pool(hs, problems, cfg, pool_rng)

    if cfg.iterations == 0:
        return TrainResult(hypersolver=hs, history=np.zeros(0), delta=pool_delta(hs, pool))

    def draw_batch():
        idx = batch_rng.choice(len(pool), size=cfg.batch_size, replace=False)
        return [pool[i] for i in idx]

    state = OptimizerState.for_net(hs.g, kind="adamw", lr=cfg.lr_max,
                                   weight_decay=cfg.weight_decay)
    sched = CosineSchedule(lr_max=cfg.lr_max, lr_min=cfg.lr_min,
                           total_steps=cfg.iterations)
    batch = draw_batch()
    history = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        if it >= cfg.pretrain_iters and (it - cfg.pretrain_iters) % cfg.batch_swap_every == 0:
            batch = draw_batch()
        loss, grads = _batch_loss_grad(hs, batch, cfg)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged to {loss}", iteration=it)
        state.lr = cosine_lr(sched, it)
        optimizer_step(state, hs.g, grads)
        history[it] = loss
    return TrainResult(hypersolver=hs, history=history, delta=pool_delta(hs, pool))


# --- parameter-step sensitivity ---------------------------------------------

@dataclass
class SensitivityReport:
    etas: np.ndarray
    sup_deltas: np.ndarray  # sup over probes of ||f_(theta - eta*grad) - f_theta||
    grad_norm: float
    slope: float  # log-log slope of sup_delta vs eta (nan with < 2 points)


def _grad_norm(grads: Gradients) -> float:
    total = sum(float(np.sum(w * w)) for w in grads.weights)
    total += sum(float(np.sum(b * b)) for b in grads.biases)
    total += float(np.sum(grads.prelu_slopes * grads.prelu_slopes))
    return float(np.sqrt(total))


def param_sensitivity(f_net: Mlp, probe_points, etas) -> SensitivityReport:
    """How far one gradient step of size eta moves the field, measured as
    the sup over probe points of the output displacement.

    The gradient is of the mean squared field magnitude over the probes —
    any fixed loss works, the point is the eta-scaling of the response.
    """
    probes = [np.asarray(p, dtype=float) for p in probe_points]
    if not probes:
        raise RangeError("need at least one probe point")
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    if np.any(etas < 0.0):
        raise RangeError("etas must be >= 0")

    grads = Gradients.zeros_like(f_net)
    for p in probes:
        out = mlp_forward(f_net, p)
        grads.add_(mlp_backward(f_net, p, out / len(probes)))
    grad_norm = _grad_norm(grads)

    base_outs = [mlp_forward(f_net, p) for p in probes]
    sups = np.empty(len(etas))
    for i, eta in enumerate(etas):
        stepped = f_net.copy()
        for w, gw in zip(stepped.weights, grads.weights):
            w -= eta * gw
        for b, gb in zip(stepped.biases, grads.biases):
            b -= eta * gb
        stepped.prelu_slopes = stepped.prelu_slopes - eta * grads.prelu_slopes
        sups[i] = max(
            float(np.linalg.norm(mlp_forward(stepped, p) - out0))
            for p, out0 in zip(probes, base_outs)
        )

    mask = (etas > 0.0) & (sups > 0.0)
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(etas[mask]), np.log(sups[mask]), 1)[0])
    else:
        slope = float("nan")
    return SensitivityReport(etas=etas, sup_deltas=sups, grad_norm=grad_norm, slope=slope)


# --- bundles ----------------------------------------------------------------
# A trained hypersolver on disk: corrector JSON, base identification, layout
# flag, training-config echo, and the final residual gap delta.

def save_bundle(dir_path, hs: Hypersolver, cfg: TrainConfig | None = None,
                delta: float | None = None, history=None):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    save_mlp(hs.g, d / "corrector.json")
    doc = {
        "base": hs.base.name,
        "order": hs.base.order,
        "include_s": hs.include_s,
        "n_z": hs.n_z,
        "train_config": asdict(cfg) if cfg is not None else None,
        "delta": delta,
    }
    if hs.base.name.startswith("alpha"):
        doc["alpha"] = float(hs.base.name[5:])
    with open(d / "bundle.json", "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    if history is not None:
        with open(d / "history.csv", "w") as fh:
            fh.write("iteration,loss\n")
            for i, l in enumerate(history):
                fh.write(f"{i},{l:.17g}\n")


def load_bundle(dir_path):
    """Returns (Hypersolver, bundle manifest dict)."""
    d = Path(dir_path)
    with open(d / "bundle.json") as fh:
        doc = json.load(fh)
    name = doc["base"]
    if name in NAMED_TABLEAUS:
        base = NAMED_TABLEAUS[name]()
    elif "alpha" in doc:
        base = tableau_alpha(float(doc["alpha"]))
    else:
        raise KeyError(f"bundle references unknown base tableau {name!r}")
    g = load_mlp(d / "corrector.json")
    return Hypersolver(base=base, g=g, include_s=doc["include_s"]), doc
