"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Every operation builds a node that records its parents and a vector-Jacobian
product closure. Nodes get a monotonically increasing id at creation, so the id
order is a valid topological order of any graph built from them.

Broadcasting is restricted: two operands must either have equal shapes or one
shape must be a trailing suffix of the other (a shared leading batch). Anything
else raises ``ShapeError``.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Graph",
    "tensor",
    "constant",
    "grad",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "reshape",
    "concat",
    "stack",
    "tsum",
    "mean",
    "relu",
    "softplus",
    "sigmoid",
    "tanh",
    "identity",
    "softmax",
    "cross_entropy",
    "mse",
    "finite_diff_grad",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for a primitive."""


class Tensor:
    """Immutable float64 array that may take part in a differentiable graph."""

    __slots__ = ("data", "requires_grad", "op", "_parents", "_vjp", "_id")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp: Callable | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite value produced by '{op}'")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._vjp = vjp
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op, parents, vjp) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, op=op,
                  parents=parents if needs else (), vjp=vjp if needs else None)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb} "
                         "(only a shared leading batch dimension may differ)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return _node(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    return mul(a, -1.0)


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or ``(..., k) @ (k, m)``; the right operand is 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: expected (..., k) @ (k, m), got {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node(a.data @ b.data, "matmul", (a, b), vjp)


# -- structural -----------------------------------------------------------

def take(a, index) -> Tensor:
    """Basic (int/slice) indexing; the gradient scatters back into zeros."""
    a = _as_tensor(a)
    idx = index if isinstance(index, tuple) else (index,)
    for i in idx:
        if not (isinstance(i, (int, np.integer, slice)) or i is Ellipsis):
            raise TypeError(f"slice: only int/slice indices supported, got {type(i).__name__}")
    try:
        value = a.data[idx]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {a.shape}") from exc

    def vjp(g):
        out = np.zeros(a.shape)
        out[idx] = g
        return (out,)

    return _node(value, "slice", (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=ax), "concat", tuple(ts),
                 lambda g: tuple(np.split(g, sizes, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    """Stack by reshaping each operand to carry a unit axis and concatenating."""
    ts = [_as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(a.data.sum(axis=axis), "sum", (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / float(n))


# -- activations ----------------------------------------------------------

def identity(a) -> Tensor:
    a = _as_tensor(a)
    return _node(a.data, "identity", (a,), lambda g: (g,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    positive = a.data > 0
    return _node(np.where(positive, a.data, 0.0), "relu", (a,), lambda g: (g * positive,))


def softplus(a, beta: float = 1.0) -> Tensor:
    """``log(1 + exp(beta * z)) / beta`` in the overflow-free form."""
    a = _as_tensor(a)
    if beta <= 0:
        raise ValueError(f"softplus beta must be positive, got {beta}")
    z = beta * a.data
    value = (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta
    slope = 0.5 * (1.0 + np.tanh(0.5 * z))
    return _node(value, "softplus", (a,), lambda g: (g * slope,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, "softmax", (a,), vjp)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are integer classes over the leading dims."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} does not match "
                         f"logits {logits.shape}")
    flat = logits.data.reshape(-1, logits.shape[-1])
    lab = labels.reshape(-1).astype(int)
    if lab.min() < 0 or lab.max() >= flat.shape[1]:
        raise ValueError("cross_entropy: label out of range")
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = flat.shape[0]
    value = -logp[np.arange(n), lab].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), lab] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)

    return _node(value, "cross_entropy", (logits,), vjp)


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# -- backward -------------------------------------------------------------

def grad(output: Tensor, wrt: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Gradients of ``sum(seed * output)`` with respect to each tensor in ``wrt``.

    Without ``seed`` the output must be a scalar (size 1).
    """
    if seed is None:
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}; "
                             "pass a seed/selector")
        seed = np.ones(output.shape)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeError(f"backward: seed shape {seed.shape} != output {output.shape}")

    order: dict[int, Tensor] = {}
    stack_ = [output]
    while stack_:
        node = stack_.pop()
        if node._id in order or not node.requires_grad:
            continue
        order[node._id] = node
        stack_.extend(node._parents)

    keep = {t._id for t in wrt}
    grads: dict[int, np.ndarray] = {output._id: seed}
    for nid in sorted(order, reverse=True):
        node = order[nid]
        g = grads.get(nid) if nid in keep else grads.pop(nid, None)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg

    return [grads.get(t._id, np.zeros(t.shape)) for t in wrt]


class Graph:
    """A traced differentiable function with explicit forward/backward phases.

    ``fn`` receives one ``Tensor`` per input and returns a ``Tensor``.
    ``input_shapes`` optionally pins the expected shape of each input.
    """

    def __init__(self, fn: Callable[..., Tensor], input_shapes: Sequence[tuple] | None = None,
                 name: str | None = None):
        self.fn = fn
        self.input_shapes = None if input_shapes is None else [tuple(s) for s in input_shapes]
        self.name = name or getattr(fn, "__name__", "graph")
        self._inputs: list[Tensor] | None = None
        self._output: Tensor | None = None

    def forward(self, *inputs) -> Tensor:
        ts = [x if isinstance(x, Tensor) else Tensor(x, requires_grad=True) for x in inputs]
        if self.input_shapes is not None:
            if len(ts) != len(self.input_shapes):
                raise ShapeError(f"{self.name}: expected {len(self.input_shapes)} inputs, got {len(ts)}")
            for i, (t, s) in enumerate(zip(ts, self.input_shapes)):
                if t.shape != s:
                    raise ShapeError(f"{self.name}: input {i} expected shape {s}, got {t.shape}")
        self._inputs = ts
        self._output = self.fn(*ts)
        return self._output

    def backward(self, selector=None, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray]:
        """Gradient of the selected scalar with respect to the inputs (or ``wrt``).

        ``selector`` is ``None`` for a scalar output, an index tuple/int picking
        one element, or a weight array of the output's shape.
        """
        if self._output is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        out = self._output
        if selector is None:
            seed = None
        elif isinstance(selector, (int, np.integer, tuple)):
            seed = np.zeros(out.shape)
            try:
                seed[selector] = 1.0
            except IndexError as exc:
                raise ShapeError(f"{self.name}: selector {selector!r} out of range for "
                                 f"output {out.shape}") from exc
            if np.count_nonzero(seed) != 1:
                raise ShapeError(f"{self.name}: selector {selector!r} does not pick a scalar")
        else:
            seed = np.asarray(selector, dtype=np.float64)
        return grad(out, self._inputs if wrt is None else wrt, seed)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g
