"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The primitive set is intentionally small: matrix products, (bias-)addition,
elementwise products, scalar scaling, tanh/relu, feature-axis concatenation,
and the reductions needed for squared-error objectives. Each primitive returns
a fresh Tensor; when tracking is enabled and an operand requires gradients,
the output records its parents and a backward closure. Node ids grow
monotonically, so iterating reachable nodes in decreasing id order is a valid
reverse topological order for backpropagation.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientMap",
    "ShapeMismatch",
    "AutodiffError",
    "no_grad",
    "as_tensor",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "relu",
    "concat_cols",
    "mean_all",
    "sum_all",
    "sq_diff_rowsum",
    "backward",
    "grad_check",
]

_NODE_IDS = itertools.count()
# single-element list so closures observe toggling by no_grad
_TRACKING = [True]


class ShapeMismatch(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...]):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{primitive}: shapes {shown} do not conform")


class AutodiffError(RuntimeError):
    """Invalid tape use: non-scalar loss, or NaN met during backward."""


class no_grad:
    """Disable tape recording inside a ``with`` block."""

    def __enter__(self) -> "no_grad":
        self._saved = _TRACKING[0]
        _TRACKING[0] = False
        return self

    def __exit__(self, *_exc) -> bool:
        _TRACKING[0] = self._saved
        return False


class Tensor:
    """Contiguous row-major float64 array, optionally recorded on the tape.

    Tensors are values: no primitive mutates its inputs. The only sanctioned
    mutation is rebinding ``data`` of parameter leaves (optimizer updates)
    and the temporary in-place perturbation done by `grad_check`.
    """

    # tape nodes are allocated per-op in hot training loops
    __slots__ = ("data", "requires_grad", "name", "id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.id = next(_NODE_IDS)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], list[tuple["Tensor", np.ndarray]]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def has_nonfinite(self) -> bool:
        """Checked NaN/Inf detection; tensors are not validated on creation."""
        return not bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)


GradientMap = dict[int, Tensor]


def as_tensor(value) -> Tensor:
    """Coerce arrays/scalars to a constant Tensor; pass Tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _TRACKING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward_fn(g: np.ndarray):
        out = []
        if a.requires_grad:
            out.append((a, g @ b.data.T))
        if b.requires_grad:
            out.append((b, a.data.T @ g))
        return out

    return _result(a.data @ b.data, "matmul", (a, b), backward_fn)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch("transpose", a.shape)

    def backward_fn(g: np.ndarray):
        return [(a, g.T)] if a.requires_grad else []

    return _result(a.data.T, "transpose", (a,), backward_fn)


def add(a, b) -> Tensor:
    """Elementwise sum; a 1-D right operand broadcasts over the batch axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:

        def backward_fn(g: np.ndarray):
            out = []
            if a.requires_grad:
                out.append((a, g))
            if b.requires_grad:
                out.append((b, g))
            return out

    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:

        def backward_fn(g: np.ndarray):
            out = []
            if a.requires_grad:
                out.append((a, g))
            if b.requires_grad:
                out.append((b, g.sum(axis=0)))
            return out

    else:
        raise ShapeMismatch("add", a.shape, b.shape)
    return _result(a.data + b.data, "add", (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("sub", a.shape, b.shape)

    def backward_fn(g: np.ndarray):
        out = []
        if a.requires_grad:
            out.append((a, g))
        if b.requires_grad:
            out.append((b, -g))
        return out

    return _result(a.data - b.data, "sub", (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)

    def backward_fn(g: np.ndarray):
        out = []
        if a.requires_grad:
            out.append((a, g * b.data))
        if b.requires_grad:
            out.append((b, g * a.data))
        return out

    return _result(a.data * b.data, "mul", (a, b), backward_fn)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward_fn(g: np.ndarray):
        return [(a, c * g)] if a.requires_grad else []

    return _result(c * a.data, "scale", (a,), backward_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward_fn(g: np.ndarray):
        return [(a, (1.0 - y * y) * g)] if a.requires_grad else []

    return _result(y, "tanh", (a,), backward_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward_fn(g: np.ndarray):
        return [(a, mask * g)] if a.requires_grad else []

    return _result(np.where(mask, a.data, 0.0), "relu", (a,), backward_fn)


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate matrices along the feature axis (axis 1)."""
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise ShapeMismatch("concat_cols")
    rows = ts[0].shape[0] if ts[0].ndim == 2 else None
    if rows is None or any(t.ndim != 2 or t.shape[0] != rows for t in ts):
        raise ShapeMismatch("concat_cols", *(t.shape for t in ts))
    widths = [t.shape[1] for t in ts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def backward_fn(g: np.ndarray):
        return [
            (t, g[:, offsets[i] : offsets[i + 1]])
            for i, t in enumerate(ts)
            if t.requires_grad
        ]

    return _result(np.concatenate([t.data for t in ts], axis=1), "concat_cols", tuple(ts), backward_fn)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def backward_fn(g: np.ndarray):
        return [(a, np.full(a.shape, g.item() / n))] if a.requires_grad else []

    return _result(np.asarray(a.data.mean()), "mean_all", (a,), backward_fn)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g: np.ndarray):
        return [(a, np.full(a.shape, g.item()))] if a.requires_grad else []

    return _result(np.asarray(a.data.sum()), "sum_all", (a,), backward_fn)


def sq_diff_rowsum(a, b) -> Tensor:
    """Per-row squared L2 distance: out[i] = sum_j (a[i,j] - b[i,j])^2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeMismatch("sq_diff_rowsum", a.shape, b.shape)
    diff = a.data - b.data

    def backward_fn(g: np.ndarray):
        d = 2.0 * diff * g[:, None]
        out = []
        if a.requires_grad:
            out.append((a, d))
        if b.requires_grad:
            out.append((b, -d))
        return out

    return _result((diff * diff).sum(axis=1), "sq_diff_rowsum", (a, b), backward_fn)


def backward(loss: Tensor, params: Sequence[Tensor]) -> GradientMap:
    """Reverse-mode gradients of a scalar loss w.r.t. the given parameters.

    Parameters not reachable from the loss get zero gradients. The returned
    map is keyed by tensor id; every requested parameter appears exactly once
    with a gradient of identical shape.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.id not in nodes:
            nodes[t.id] = t
            stack.extend(t._parents)

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for t in sorted(nodes.values(), key=lambda n: n.id, reverse=True):
        if t._backward is None:
            continue
        g = grads.get(t.id)
        if g is None:
            continue
        for parent, contrib in t._backward(g):
            if np.isnan(contrib).any():
                raise AutodiffError(f"NaN produced in backward of {t.op!r}")
            acc = grads.get(parent.id)
            grads[parent.id] = contrib if acc is None else acc + contrib

    return {
        p.id: Tensor(grads[p.id]) if p.id in grads else Tensor(np.zeros_like(p.data))
        for p in params
    }


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs ``x.data`` in place coordinate by coordinate (restored before
    returning). ``f`` must be scalar-valued and deterministic across calls.
    The error is max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
    """
    analytic = backward(f(x), [x])[x.id].data
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
