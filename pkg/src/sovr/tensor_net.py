"""Dense ReLU classifier with exact reverse-mode gradients.

Everything is float64.  ``forward`` and ``backward`` accept either a single
input vector of shape ``(d,)`` or a batch of shape ``(n, d)``; batched
calls return per-example input gradients and parameter gradients summed
over the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .serialize import atomic_write_text


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Feedforward classifier ``d -> h1 -> ... -> K``.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``.  Hidden
    layers use ReLU, the last layer emits raw logits.  Arrays are made
    read-only so a network can be shared between evaluations.
    """

    layer_dims: tuple
    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigError(f"bad layer_dims {self.layer_dims!r}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(dims) - 1 or len(bs) != len(dims) - 1:
            raise ConfigError("need one weight matrix and bias per layer")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (dims[l + 1], dims[l]):
                raise ConfigError(
                    f"weights[{l}] has shape {w.shape}, expected {(dims[l + 1], dims[l])}"
                )
            if b.shape != (dims[l + 1],):
                raise ConfigError(f"biases[{l}] has shape {b.shape}, expected {(dims[l + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"non-finite parameters in layer {l}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list:
        """Weights followed by biases, layer by layer."""
        return list(self.weights) + list(self.biases)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def replace(self, weights, biases) -> "Network":
        return Network(self.layer_dims, tuple(weights), tuple(biases), self.activation)

    def equals(self, other: "Network") -> bool:
        """Bit-exact parameter equality."""
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list  # pre-activation per layer
    post: list  # post-activation per layer (the last one equals the logits)

    @property
    def batched(self) -> bool:
        return self.inputs.ndim == 2


@dataclass
class GradientBundle:
    weight_grads: list
    bias_grads: list
    input_grad: np.ndarray

    def param_grads(self) -> list:
        return list(self.weight_grads) + list(self.bias_grads)

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(
            [a + b for a, b in zip(self.weight_grads, other.weight_grads)],
            [a + b for a, b in zip(self.bias_grads, other.bias_grads)],
            self.input_grad,
        )


def init_network(layer_dims: Sequence[int], seed: int = 0) -> Network:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(tuple(dims), tuple(weights), tuple(biases))


def forward(net: Network, x) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ConfigError(f"input of shape {x.shape} does not match input dim {net.input_dim}")
    pre, post = [], []
    a = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = a @ w.T + b
        pre.append(h)
        a = h if l == last else np.maximum(h, 0.0)
        post.append(a)
    return a, ForwardTrace(x, pre, post)


def logits(net: Network, x) -> np.ndarray:
    return forward(net, x)[0]


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def backward(net: Network, trace: ForwardTrace, dL_dz) -> GradientBundle:
    """Reverse pass for the scalar whose logit gradient is ``dL_dz``.

    For a batched trace, ``dL_dz`` has shape ``(n, K)`` and the parameter
    gradients are summed over the batch.
    """
    g = np.asarray(dL_dz, dtype=np.float64)
    if g.shape != trace.post[-1].shape:
        raise ConfigError(f"dL_dz shape {g.shape} != logits shape {trace.post[-1].shape}")
    batched = trace.batched
    g = np.atleast_2d(g)
    n_layers = len(net.weights)
    wg = [None] * n_layers
    bg = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            # ReLU subgradient at 0 is 0
            g = g * (np.atleast_2d(trace.pre[l]) > 0.0)
        a_prev = np.atleast_2d(trace.inputs if l == 0 else trace.post[l - 1])
        wg[l] = g.T @ a_prev
        bg[l] = g.sum(axis=0)
        g = g @ net.weights[l]
    input_grad = g if batched else g[0]
    return GradientBundle(wg, bg, input_grad)


def sgd_step(net: Network, grads, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity=None):
    """One SGD update with classic (heavy-ball) momentum and L2 weight decay.

    ``grads`` is a GradientBundle or a parameter list ordered like
    ``net.parameters()``.  Returns ``(new_net, new_velocity)``.
    """
    if not lr > 0:
        raise ConfigError(f"lr must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    if weight_decay < 0:
        raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
    gs = grads.param_grads() if isinstance(grads, GradientBundle) else list(grads)
    params = net.parameters()
    for i, g in enumerate(gs):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {i}")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_params, new_vel = [], []
    for p, g, v in zip(params, gs, velocity):
        d = g + weight_decay * p if weight_decay else g
        v = momentum * v + d if momentum else d
        new_vel.append(v)
        new_params.append(p - lr * v)
    n = len(net.weights)
    return net.replace(new_params[:n], new_params[n:]), new_vel


# -- checkpoints ---------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "activation": net.activation,
    }


def network_from_dict(d: dict) -> Network:
    try:
        return Network(tuple(d["layer_dims"]), tuple(d["weights"]), tuple(d["biases"]),
                       d.get("activation", "relu"))
    except KeyError as exc:
        raise ConfigError(f"checkpoint missing field {exc}") from None


def save_network(net: Network, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    atomic_write_text(path, json.dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
