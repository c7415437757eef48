"""Minimal dense network engine: MLP forward/backward, Adam/AdamW, cosine LR.

Everything is plain float64 numpy. Gradients are computed sample-at-a-time
and accumulated; batching is a loop at the call site, not a tensor axis.
Forward/backward are pure given fixed parameters; optimizer_step mutates
the network and its state in place and must be serialized per net.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, RangeError

ACTIVATIONS = ("tanh", "softplus", "prelu")

DEFAULT_PRELU_SLOPE = 0.25


@dataclass
class Mlp:
    """Dense feed-forward net. Hidden layers share one activation tag;
    the output layer is linear. For prelu there is one trainable scalar
    slope per hidden layer."""

    weights: list  # per layer, shape (out, in)
    biases: list  # per layer, shape (out,)
    activation: str
    prelu_slopes: np.ndarray  # shape (n_hidden,), empty unless activation == "prelu"

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    def copy(self):
        return Mlp(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            prelu_slopes=self.prelu_slopes.copy(),
        )


@dataclass
class Gradients:
    """Parameter gradients mirroring an Mlp's shapes. Additive."""

    weights: list
    biases: list
    prelu_slopes: np.ndarray

    @classmethod
    def zeros_like(cls, net: Mlp) -> "Gradients":
        return cls(
            weights=[np.zeros_like(w) for w in net.weights],
            biases=[np.zeros_like(b) for b in net.biases],
            prelu_slopes=np.zeros_like(net.prelu_slopes),
        )

    def add_(self, other: "Gradients") -> "Gradients":
        for w, ow in zip(self.weights, other.weights):
            w += ow
        for b, ob in zip(self.biases, other.biases):
            b += ob
        self.prelu_slopes += other.prelu_slopes
        return self

    def scale_(self, factor: float) -> "Gradients":
        for w in self.weights:
            w *= factor
        for b in self.biases:
            b *= factor
        self.prelu_slopes *= factor
        return self

    def is_finite(self) -> bool:
        return (
            all(np.all(np.isfinite(w)) for w in self.weights)
            and all(np.all(np.isfinite(b)) for b in self.biases)
            and bool(np.all(np.isfinite(self.prelu_slopes)))
        )


def mlp_init(dims, activation: str = "tanh", seed: int = 0) -> Mlp:
    """Build an MLP with Glorot-uniform weights and zero biases.

    Weights of each layer are drawn uniformly in
    [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))], deterministically
    for a given seed. Prelu slopes start at 0.25.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise DimensionError(f"dims must be >= 2 positive integers, got {dims}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    n_hidden = len(dims) - 2
    slopes = (
        np.full(n_hidden, DEFAULT_PRELU_SLOPE)
        if activation == "prelu"
        else np.zeros(n_hidden)
    )
    return Mlp(weights=weights, biases=biases, activation=activation, prelu_slopes=slopes)


def mlp_zero(dims, activation: str = "tanh") -> Mlp:
    """All-zero network of the given shape (outputs zero everywhere)."""
    net = mlp_init(dims, activation, seed=0)
    for w in net.weights:
        w[:] = 0.0
    return net


def _activate(pre, activation, slope):
    if activation == "tanh":
        return np.tanh(pre)
    if activation == "softplus":
        return np.logaddexp(0.0, pre)
    # prelu
    return np.where(pre > 0.0, pre, slope * pre)


def _activate_grad(pre, activation, slope):
    if activation == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if activation == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * pre))  # numerically stable sigmoid
    return np.where(pre > 0.0, 1.0, slope)


def _forward_trace(net: Mlp, x):
    """Run the forward pass keeping per-layer inputs and pre-activations."""
    inputs, pres = [], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        pre = w @ h + b
        if i < last:
            pres.append(pre)
            h = _activate(pre, net.activation, net.prelu_slopes[i] if net.activation == "prelu" else 0.0)
        else:
            h = pre
    return h, inputs, pres


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise DimensionError(f"input shape {x.shape} != ({net.input_dim},)")
    out, _, _ = _forward_trace(net, x)
    return out


def mlp_vjp(net: Mlp, x, upstream) -> tuple[Gradients, np.ndarray]:
    """Reverse-mode pass: gradients of <upstream, net(x)> w.r.t. parameters
    and w.r.t. the input vector."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape != (net.input_dim,):
        raise DimensionError(f"input shape {x.shape} != ({net.input_dim},)")
    if upstream.shape != (net.output_dim,):
        raise DimensionError(f"upstream shape {upstream.shape} != ({net.output_dim},)")

    _, inputs, pres = _forward_trace(net, x)
    grads = Gradients.zeros_like(net)
    delta = upstream
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            slope = net.prelu_slopes[i] if net.activation == "prelu" else 0.0
            if net.activation == "prelu":
                grads.prelu_slopes[i] = float(np.sum(delta * np.where(pres[i] > 0.0, 0.0, pres[i])))
            delta = delta * _activate_grad(pres[i], net.activation, slope)
        grads.weights[i] += np.outer(delta, inputs[i])
        grads.biases[i] += delta
        delta = net.weights[i].T @ delta
    return grads, delta


def mlp_backward(net: Mlp, x, upstream) -> Gradients:
    """Exact parameter gradient of <upstream, mlp_forward(net, x)>."""
    grads, _ = mlp_vjp(net, x, upstream)
    return grads


@dataclass
class OptimizerState:
    """Adam / AdamW state. Moment buffers mirror the net's shapes."""

    kind: str = "adamw"
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: Gradients | None = None
    v: Gradients | None = None
    step_count: int = 0

    @classmethod
    def for_net(cls, net: Mlp, kind: str = "adamw", lr: float = 1e-2,
                betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        if kind not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        return cls(kind=kind, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay,
                   m=Gradients.zeros_like(net), v=Gradients.zeros_like(net))


def _adam_update(param, g, m, v, state, bc1, bc2):
    b1, b2 = state.betas
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    m_hat = m / bc1
    v_hat = v / bc2
    if state.kind == "adamw" and state.weight_decay != 0.0:
        param -= state.lr * state.weight_decay * param
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def optimizer_step(state: OptimizerState, net: Mlp, grads: Gradients):
    """Apply one Adam/AdamW step in place. Returns (net, state)."""
    if state.m is None or state.v is None:
        raise ValueError("optimizer state not initialized; use OptimizerState.for_net")
    if not grads.is_finite():
        raise NumericError("non-finite gradient entries")
    state.step_count += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for i in range(len(net.weights)):
        _adam_update(net.weights[i], grads.weights[i], state.m.weights[i],
                     state.v.weights[i], state, bc1, bc2)
        _adam_update(net.biases[i], grads.biases[i], state.m.biases[i],
                     state.v.biases[i], state, bc1, bc2)
    if net.activation == "prelu" and net.prelu_slopes.size:
        _adam_update(net.prelu_slopes, grads.prelu_slopes, state.m.prelu_slopes,
                     state.v.prelu_slopes, state, bc1, bc2)
    return net, state


@dataclass
class CosineSchedule:
    lr_max: float
    lr_min: float
    total_steps: int


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise RangeError(f"step {step} outside [0, {schedule.total_steps}]")
    frac = step / schedule.total_steps
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + math.cos(math.pi * frac))


# --- JSON serialization ----------------------------------------------------
# Floats go through Python's repr (shortest exact decimal), so a round trip
# is value-exact for every 64-bit float.

def mlp_to_dict(net: Mlp) -> dict:
    return {
        "dims": net.dims,
        "activation": net.activation,
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
        "prelu_slopes": net.prelu_slopes.tolist(),
    }


def mlp_from_dict(doc: dict) -> Mlp:
    dims = doc["dims"]
    weights = [np.array(layer["weights"], dtype=float) for layer in doc["layers"]]
    biases = [np.array(layer["bias"], dtype=float) for layer in doc["layers"]]
    got = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    if got != list(dims):
        raise DimensionError(f"layer shapes {got} do not match declared dims {dims}")
    return Mlp(
        weights=weights,
        biases=biases,
        activation=doc["activation"],
        prelu_slopes=np.array(doc["prelu_slopes"], dtype=float),
    )


def save_mlp(net: Mlp, path):
    with open(path, "w") as fh:
        json.dump(mlp_to_dict(net), fh, indent=1)


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        return mlp_from_dict(json.load(fh))
