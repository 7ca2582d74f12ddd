"""MLP building blocks, Adam optimizer, cosine learning-rate schedule, checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import (
    GradientMap,
    ShapeMismatch,
    Tensor,
    add,
    concat_cols,
    matmul,
    relu,
    tanh,
    transpose,
)

__all__ = [
    "LinearLayer",
    "Mlp",
    "AdamState",
    "OptimizerError",
    "adam_step",
    "cosine_lr",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = {"tanh": tanh, "relu": relu}


class OptimizerError(RuntimeError):
    """Raised on invalid optimizer input (e.g. NaN gradients)."""


class LinearLayer:
    """Affine map x -> x @ W.T + b with W of shape [out, in] and b of shape [out]."""

    def __init__(self, weight: Tensor, bias: Tensor):
        if weight.ndim != 2 or bias.ndim != 1 or bias.shape[0] != weight.shape[0]:
            raise ShapeMismatch("linear", weight.shape, bias.shape)
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, name: str = "linear"):
        # uniform Kaiming-style init scaled by 1/sqrt(fan_in)
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        return cls(
            Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(b, requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, transpose(self.weight)), self.bias)


class Mlp:
    """Affine-activation chain; no activation after the final layer.

    When ``time_conditioned`` is set, the time variable is concatenated to the
    input of every layer, so each layer's input width includes one extra slot.
    ``calls`` counts forward invocations (one per batched evaluation), which
    is how dynamics-function evaluations are accounted.
    """

    def __init__(self, layers: Sequence[LinearLayer], activation: str = "tanh",
                 time_conditioned: bool = False):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        extra = 1 if time_conditioned else 0
        for i in range(len(layers) - 1):
            if layers[i + 1].n_in != layers[i].n_out + extra:
                raise ShapeMismatch(
                    f"mlp layer {i + 1}",
                    layers[i + 1].weight.shape,
                    layers[i].weight.shape,
                )
        self.layers = list(layers)
        self.activation = activation
        self.time_conditioned = time_conditioned
        self.calls = 0

    @classmethod
    def build(cls, dims: Sequence[int], activation: str = "tanh",
              time_conditioned: bool = False, rng: np.random.Generator | None = None,
              name: str = "mlp") -> "Mlp":
        """Build from a [d_in, hidden..., d_out] dimension chain."""
        if len(dims) < 2:
            raise ValueError("dims must contain at least input and output sizes")
        if rng is None:
            rng = np.random.default_rng(0)
        extra = 1 if time_conditioned else 0
        layers = [
            LinearLayer.init(dims[i] + extra, dims[i + 1], rng, name=f"{name}.{i}")
            for i in range(len(dims) - 1)
        ]
        return cls(layers, activation=activation, time_conditioned=time_conditioned)

    @property
    def d_in(self) -> int:
        return self.layers[0].n_in - (1 if self.time_conditioned else 0)

    @property
    def d_out(self) -> int:
        return self.layers[-1].n_out

    def forward(self, x, t=None) -> Tensor:
        if self.time_conditioned and t is None:
            raise ValueError("time-conditioned MLP called without t")
        if not self.time_conditioned and t is not None:
            raise ValueError("t passed to an MLP that is not time-conditioned")
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.ndim != 2:
            raise ShapeMismatch("mlp input", h.shape)
        self.calls += 1
        n = h.shape[0]
        t_col = _time_column(t, n) if self.time_conditioned else None
        act = _ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if t_col is not None:
                h = concat_cols([h, t_col])
            if h.shape[1] != layer.n_in:
                raise ShapeMismatch(f"mlp layer {i}", h.shape, layer.weight.shape)
            h = layer(h)
            if i < last:
                h = act(h)
        return h

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name or str(p.id), p) for p in self.parameters()]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _time_column(t, n: int) -> Tensor:
    """Constant [n, 1] column from a shared scalar t or a per-sample vector."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        col = np.full((n, 1), float(arr))
    elif arr.ndim == 1 and arr.shape[0] == n:
        col = arr[:, None]
    else:
        raise ShapeMismatch("time column", arr.shape, (n,))
    return Tensor(col)


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[int, np.ndarray]
    v: dict[int, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={p.id: np.zeros_like(p.data) for p in params},
            v={p.id: np.zeros_like(p.data) for p in params},
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: Sequence[Tensor], grads: GradientMap, state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update, applied to the parameter tensors in place."""
    missing = [p for p in params if p.id not in grads]
    if missing:
        names = ", ".join(str(p.name or p.id) for p in missing)
        raise OptimizerError(f"gradients missing for parameters: {names}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p in params:
        g = grads[p.id].data
        if np.isnan(g).any():
            raise OptimizerError(f"NaN gradient for parameter {p.name or p.id}")
        m = state.m[p.id] = state.beta1 * state.m[p.id] + (1.0 - state.beta1) * g
        v = state.v[p.id] = state.beta2 * state.v[p.id] + (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def cosine_lr(step: int, total: int, base: float) -> float:
    """Half-cosine decay from ``base`` at step 0 to 0 at ``total``."""
    if total <= 0:
        raise ValueError("total iterations must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


# Checkpoints are flat (name, shape, values) records. Values are written as
# C99 hex floats so the 64-bit round trip is bit-exact.

def save_checkpoint(path, named_params: Sequence[tuple[str, Tensor]]) -> None:
    payload = {
        "format": "hexfloat-v1",
        "params": [
            {
                "name": name,
                "shape": list(p.shape),
                "values": [v.hex() for v in p.data.reshape(-1).tolist()],
            }
            for name, p in named_params
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "hexfloat-v1":
        raise ValueError(f"unsupported checkpoint format in {path}")
    out = {}
    for rec in payload["params"]:
        arr = np.array([float.fromhex(v) for v in rec["values"]], dtype=np.float64)
        out[rec["name"]] = arr.reshape(rec["shape"])
    return out
