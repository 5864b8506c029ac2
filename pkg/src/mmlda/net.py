"""Dense feed-forward networks with exact reverse-mode gradients and Adam.

Everything is double precision numpy.  A network is immutable during
forward/backward; training mutates its parameter arrays in place through
:func:`adam_step` from a single writer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import make_rng

__all__ = [
    "DenseLayer",
    "Network",
    "ForwardCache",
    "AdamState",
    "GradientCheckResult",
    "init_network",
    "forward",
    "forward_cached",
    "backward",
    "adam_step",
    "gradient_check",
    "save_tensor",
    "load_tensor",
]

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray    # (fan_out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (fan_in, fan_out) with matching bias")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class Network:
    """Ordered dense layers mapping input_dim -> latent_dim."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("need at least one layer")
        for prev, cur in zip(layers, layers[1:]):
            if prev.weight.shape[1] != cur.weight.shape[0]:
                raise ValueError("consecutive layer dimensions must chain")
        self.layers = list(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W1, b1, W2, b2, ...] (live views, not copies)."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def copy(self) -> "Network":
        return Network([
            DenseLayer(layer.weight.copy(), layer.bias.copy(), layer.activation)
            for layer in self.layers
        ])


def init_network(layer_dims, seed: int, final_activation: str = "identity") -> Network:
    """Network with relu hidden layers, symmetric uniform init of scale
    sqrt(6 / (fan_in + fan_out)), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("need input and output dimensions")
    rng = make_rng(seed, 101)
    layers = []
    for idx, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = (2.0 * rng.random((fan_in, fan_out)) - 1.0) * limit
        activation = final_activation if idx == len(dims) - 2 else "relu"
        layers.append(DenseLayer(weight, np.zeros(fan_out), activation))
    return Network(layers)


def _apply_activation(pre: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(pre, 0.0) if kind == "relu" else pre


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]   # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Latent features for a batch of rows."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"batch must be (n, {net.input_dim}), got {x.shape}")
    for layer in net.layers:
        x = _apply_activation(x @ layer.weight + layer.bias, layer.activation)
    return x


def forward_cached(net: Network, batch: np.ndarray):
    """Latent features plus the per-layer cache needed by :func:`backward`."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"batch must be (n, {net.input_dim}), got {x.shape}")
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(x)
        pre = x @ layer.weight + layer.bias
        preacts.append(pre)
        x = _apply_activation(pre, layer.activation)
    return x, ForwardCache(inputs, preacts)


def backward(net: Network, head_grad: np.ndarray, cache: ForwardCache):
    """Exact reverse-mode gradients.

    Returns ``(param_grads, input_grad)`` where param_grads matches the layout
    of ``net.params()``.  The cache must come from the paired forward pass;
    mismatched shapes are rejected.
    """
    g = np.asarray(head_grad, dtype=np.float64)
    if len(cache.inputs) != len(net.layers) or len(cache.preacts) != len(net.layers):
        raise ValueError("cache does not match this network")
    if g.shape != cache.preacts[-1].shape:
        raise ValueError(
            f"head_grad shape {g.shape} does not match cached output {cache.preacts[-1].shape}"
        )
    param_grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x_in, pre = cache.inputs[idx], cache.preacts[idx]
        if x_in.shape[1] != layer.weight.shape[0]:
            raise ValueError("cache does not match this network")
        if layer.activation == "relu":
            g = g * (pre > 0.0)
        param_grads[2 * idx] = x_in.T @ g
        param_grads[2 * idx + 1] = g.sum(axis=0)
        g = g @ layer.weight.T
    return param_grads, g


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, applied to the params in place."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("params/grads do not match the optimizer state")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass(frozen=True)
class GradientCheckResult:
    max_rel_err: float
    passed: bool


def gradient_check(net: Network, head, batch: np.ndarray, labels: np.ndarray,
                   h: float = 1e-5, tol: float = 1e-4) -> GradientCheckResult:
    """Compare analytic gradients against central finite differences.

    Covers every network parameter, every head parameter, and every input
    entry.  Relative error is |a - n| / max(1e-6, |a| + |n|); the floor keeps
    finite-difference noise on dead units from registering as failures.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] > 8:
        raise ValueError("keep finite-difference batches at 8 rows or fewer")

    z, cache = forward_cached(net, batch)
    _, dz, head_grads = head.loss_grads(z, labels)
    net_grads, input_grad = backward(net, dz, cache)

    def evaluate():
        # reads the live (possibly perturbed) arrays, batch included
        return head.loss_grads(forward(net, batch), labels)[0]

    worst = 0.0

    def compare(array, grad):
        nonlocal worst
        flat, gflat = array.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - numeric) / max(1e-6, abs(gflat[i]) + abs(numeric))
            worst = max(worst, rel)

    for param, grad in zip(net.params(), net_grads):
        compare(param, grad)
    for param, grad in zip(head.params(), head_grads):
        compare(param, grad)
    compare(batch, input_grad)

    return GradientCheckResult(float(worst), worst <= tol)


def save_tensor(path, array: np.ndarray) -> None:
    """Exact JSON serialization of a float64 array (shape + row-major values)."""
    arr = np.asarray(array, dtype=np.float64)
    doc = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_tensor(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    return np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"])
