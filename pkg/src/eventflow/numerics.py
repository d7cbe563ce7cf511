"""Dense float64 tensors with a reverse-mode tape.

Every operation records its parents and a backward rule; ``Tensor.backward``
walks the graph in reverse topological order and accumulates gradients into
every node that requires them.  Broadcasting follows numpy semantics and the
backward rules reduce gradients back to the operand shapes.

A graph and its tape belong to one thread.  Parameter arrays must not be
mutated between a forward pass and its backward pass.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericalError",
    "Tensor",
    "AdamState",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "broadcast_to",
    "softmax",
    "softmax_rows",
    "relu",
    "sigmoid",
    "tanh",
    "activation",
    "gather",
    "mean",
    "total",
    "smooth_l1",
    "adam_step",
    "grad_check",
    "make_rng",
    "linear_init",
    "embedding_init",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """An operation produced a non-finite value."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by {op!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class Tensor:
    """A node in the compute graph: an array, its gradient and its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(x, requires_grad: bool = False, name: str | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _checked(op: str, out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericalError(op)
    return out


def _make(op: str, out: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        _checked(op, out),
        requires_grad=needs,
        parents=parents if needs else (),
        backward=backward if needs else None,
        op=op,
    )


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make("mul", a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _make("scale", a.data * c, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    on = a.data > 0

    def backward(g):
        a._accumulate(g * on)

    return _make("relu", np.where(on, a.data, 0.0), (a,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _make("sigmoid", s, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return _make("tanh", t, (a,), backward)


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "tanh": tanh}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(_ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over the leading ones."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make("matmul", out, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got {a.shape}")

    def backward(g):
        a._accumulate(np.swapaxes(g, -1, -2))

    return _make("transpose", np.swapaxes(a.data, -1, -2), (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make("reshape", out, (a,), backward)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape)).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _make("broadcast_to", out, (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make("concat", out, tuple(ts), backward)


def gather(table, index) -> Tensor:
    """Row lookup ``table[index]``; ``index`` is an integer array of any shape."""
    table = _as_tensor(table)
    index = np.asarray(index, dtype=np.intp)
    if table.ndim != 2:
        raise DimensionError(f"gather expects a 2-D table, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise DimensionError(f"gather: index out of range for table with {table.shape[0]} rows")

    def backward(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, index.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(acc)

    return _make("gather", table.data[index], (table,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilised by subtracting the max."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make("softmax", s, (a,), backward)


def softmax_rows(logits) -> Tensor:
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {logits.shape}")
    return softmax(logits, axis=-1)


def mean(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)

    def backward(g):
        gk = g if keepdims or axis is None else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gk, a.shape) / count)

    return _make("mean", out, (a,), backward)


def total(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make("sum", np.asarray(a.data.sum()), (a,), backward)


def smooth_l1(pred, target, beta: float = 1.0, mask: np.ndarray | None = None) -> Tensor:
    """Mean Smooth L1 (Huber with threshold ``beta``) of ``pred - target``.

    With ``mask`` the mean runs over the elements where the mask is nonzero.
    """
    pred = _as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise DimensionError(f"smooth_l1: prediction shape {pred.shape} != target shape {tgt.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = np.ones_like(tgt) if mask is None else np.broadcast_to(np.asarray(mask, dtype=np.float64), tgt.shape)
    n = w.sum()
    if n <= 0:
        raise ValueError("smooth_l1 over an empty mask")
    d = pred.data - tgt
    ad = np.abs(d)
    quad = ad < beta
    elem = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    loss = (elem * w).sum() / n

    def backward(g):
        dd = np.where(quad, d / beta, np.sign(d))
        pred._accumulate(g * dd * w / n)

    return _make("smooth_l1", np.asarray(loss), (pred,), backward)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> Sequence[Tensor]:
    """Apply one bias-corrected Adam update in place and return ``params``."""
    if len(params) != len(grads):
        raise DimensionError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise DimensionError("adam_step: optimiser state tracks a different parameter list")
    for p, g, m in zip(params, grads, state.first_moment):
        if g is not None and np.shape(g) != p.shape:
            raise DimensionError(f"adam_step: grad shape {np.shape(g)} != param shape {p.shape}")
        if m.shape != p.shape:
            raise DimensionError(f"adam_step: moment shape {m.shape} != param shape {p.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between the tape gradient and central differences.

    For each input tensor the error is ``|a - n| / (|a| + |n|)`` in the
    Euclidean norm over all its elements (``a`` analytic, ``n`` numeric);
    the result is the maximum over inputs.  A norm per tensor keeps elements
    whose true gradient sits below roundoff from dominating.  ``f`` is
    re-evaluated with each element of each input nudged by ``±eps`` and must
    read the inputs' current ``data`` on every call.
    """
    for x in inputs:
        if not np.all(np.isfinite(x.data)):
            raise NumericalError("grad_check", "non-finite input")
        x.requires_grad = True
        x.zero_grad()
    out = f()
    if out.data.size != 1:
        raise DimensionError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [x.grad_or_zeros().copy() for x in inputs]

    worst = 0.0
    for x, ga in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        numeric = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = f().item()
            flat[k] = orig - eps
            lo = f().item()
            flat[k] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericalError("grad_check", "non-finite function value")
            numeric[k] = (hi - lo) / (2.0 * eps)
        a = ga.reshape(-1)
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(a - numeric) / max(denom, 1e-12)))
    return worst


# ---------------------------------------------------------------------------
# seeding and initialisation
# ---------------------------------------------------------------------------


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(seed: int, *labels) -> np.random.Generator:
    """PCG64 stream derived from ``seed`` and any number of stream labels."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_key(l) for l in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def embedding_init(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, dim))
