"""Feedforward SiLU networks with hand-written first-order derivatives.

Every routine accepts a single point of shape ``(d,)`` or a batch of shape
``(B, d)`` and returns arrays of the matching rank.  Jacobians are never
formed; products are computed by replaying the layer tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit as sigmoid

from .errors import InputShapeError


def silu(t):
    return t * sigmoid(t)


def silu_prime(t):
    s = sigmoid(t)
    return s + t * s * (1.0 - s)


def silu_second(t):
    s = sigmoid(t)
    return s * (1.0 - s) * (2.0 + t * (1.0 - 2.0 * s))


def param_count(widths: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@dataclass(frozen=True, eq=False)
class MlpModel:
    """A dense network ``R^widths[0] -> R^widths[-1]``.

    SiLU is applied on hidden layers and the output layer is affine.  All
    weights live in one flat float64 vector, laid out layer by layer as the
    row-major ``(out, in)`` weight matrix followed by the bias.
    """

    layer_widths: tuple
    params: np.ndarray = field(repr=False)
    activation: str = "silu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        if self.activation != "silu":
            raise ValueError("only the 'silu' activation is supported")
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != param_count(widths):
            raise ValueError(
                f"expected {param_count(widths)} parameters for widths {widths}, "
                f"got {params.size}"
            )
        params.flags.writeable = False
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "params", params)

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        chunks = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(tuple(widths), np.concatenate(chunks))

    @classmethod
    def linear(cls, weight, bias=None) -> "MlpModel":
        weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        out_dim, in_dim = weight.shape
        bias = np.zeros(out_dim) if bias is None else np.asarray(bias, dtype=np.float64)
        return cls((in_dim, out_dim), np.concatenate([weight.ravel(), bias.ravel()]))

    def with_params(self, params) -> "MlpModel":
        return MlpModel(self.layer_widths, params, self.activation)

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    @cached_property
    def layers(self) -> list:
        """``[(W, b), ...]`` views into ``params``."""
        out, offset = [], 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            w = self.params[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = self.params[offset : offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    # the map protocol shared with analytic and composite nodes
    def forward(self, x):
        return forward(self, x)

    def jvp(self, x, u):
        return jvp(self, x, u)

    def vjp(self, x, v):
        return vjp(self, x, v)

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "params": self.params.tolist(),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        return cls(tuple(d["layer_widths"]), d["params"], d.get("activation", "silu"))


@dataclass
class GradientBundle:
    param_grad: np.ndarray
    input_grad: Optional[np.ndarray] = None


def _as_batch(a, dim, what):
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise InputShapeError(f"{what}: expected trailing dimension {dim}, got shape {a.shape}")
    return a, single


def _tape(model: MlpModel, x):
    """Forward pass keeping pre-activations ``a_l`` and activations ``h_l``."""
    hs, pre = [x], []
    h = x
    for w, b in model.layers[:-1]:
        a = h @ w.T + b
        pre.append(a)
        h = silu(a)
        hs.append(h)
    w, b = model.layers[-1]
    return pre, hs, h @ w.T + b


def forward(model: MlpModel, x):
    x, single = _as_batch(x, model.in_dim, "forward input")
    h = x
    for w, b in model.layers[:-1]:
        h = silu(h @ w.T + b)
    w, b = model.layers[-1]
    y = h @ w.T + b
    return y[0] if single else y


def jvp(model: MlpModel, x, u):
    """``J(x) u`` by forward-mode propagation."""
    x, single = _as_batch(x, model.in_dim, "jvp point")
    u, _ = _as_batch(u, model.in_dim, "jvp tangent")
    h, t = x, u
    for w, b in model.layers[:-1]:
        a = h @ w.T + b
        t = silu_prime(a) * (t @ w.T)
        h = silu(a)
    w, _ = model.layers[-1]
    out = t @ w.T
    return out[0] if single else out


def _backward(model, pre, v):
    """Reverse sweep from output cotangent ``v``; returns per-layer pre-activation cotangents."""
    deltas = [None] * len(model.layers)
    deltas[-1] = v
    g = v
    for i in range(len(model.layers) - 1, 0, -1):
        w, _ = model.layers[i]
        g = silu_prime(pre[i - 1]) * (g @ w)
        deltas[i - 1] = g
    return deltas


def vjp(model: MlpModel, x, v):
    """``J(x)^T v`` by reverse-mode propagation."""
    x, single = _as_batch(x, model.in_dim, "vjp point")
    v, _ = _as_batch(v, model.out_dim, "vjp cotangent")
    if v.shape[0] != x.shape[0]:
        v = np.broadcast_to(v, (x.shape[0], model.out_dim))
    pre, _, _ = _tape(model, x)
    deltas = _backward(model, pre, v)
    out = deltas[0] @ model.layers[0][0]
    return out[0] if single else out


def _flatten_grads(model, deltas, hs):
    chunks = []
    for (w, _), d, h in zip(model.layers, deltas, hs):
        chunks.append((d.T @ h).ravel())
        chunks.append(d.sum(axis=0))
    return np.concatenate(chunks)


def param_grad(model: MlpModel, x, upstream) -> GradientBundle:
    """Gradient of ``upstream . forward(x)`` w.r.t. params and input.

    For a batch the parameter gradient is summed over rows and the input
    gradient is returned per row.
    """
    x, single = _as_batch(x, model.in_dim, "param_grad point")
    up, _ = _as_batch(upstream, model.out_dim, "param_grad upstream")
    if up.shape[0] != x.shape[0]:
        raise InputShapeError("upstream batch size differs from input batch size")
    pre, hs, _ = _tape(model, x)
    deltas = _backward(model, pre, up)
    grad_in = deltas[0] @ model.layers[0][0]
    return GradientBundle(_flatten_grads(model, deltas, hs), grad_in[0] if single else grad_in)
