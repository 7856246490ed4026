"""Minimal reverse-mode autodiff over dense float64 vectors and matrices.

Tensors wrap numpy arrays of rank 0, 1 or 2. While a ``Tape`` is active,
every primitive appends a node (output, inputs, backward rule) to it;
without an active tape the same primitives just compute values, so one
forward implementation serves both training and plain scoring.

Tapes are single-use and must stay confined to one thread.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN/Inf, or a gradient came back non-finite."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, nested tapes, etc."""


_ACTIVE: list["Tape"] = []


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 2:
        raise ValueError(f"tensors are limited to rank <= 2, got shape {a.shape}")
    return a


def _check(value: Array, op: str) -> Array:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite result in '{op}'")
    return value


class Tensor:
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = _as_array(value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(_check(_as_array(x), "input"))


class Tape:
    """Records primitive applications for one reverse sweep."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _ACTIVE:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, Array]:
        """Reverse sweep from a scalar loss; returns gradients per leaf tensor.

        Each recorded node is visited exactly once, in reverse order of
        recording, which is a valid topological order of the expression.
        """
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward")
        self._consumed = True
        if loss.value.ndim != 0:
            raise ValueError("backward requires a scalar output")
        grads: dict[Tensor, Array] = {loss: np.ones(())}
        for out, inputs, backfn in reversed(self._nodes):
            g = grads.pop(out, None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backfn(g)):
                if gi is None:
                    continue
                acc = grads.get(inp)
                grads[inp] = gi if acc is None else acc + gi
        for t, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient")
        return grads


def _record(out: Tensor, inputs: tuple[Tensor, ...], backfn: Callable) -> Tensor:
    if _ACTIVE:
        _ACTIVE[-1]._nodes.append((out, inputs, backfn))
    return out


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a gradient down to the shape the operand actually had."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(_check(a.value + b.value, "add"))

    def back(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(_check(a.value - b.value, "sub"))

    def back(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return _record(out, (a, b), back)


def neg(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(-a.value)

    def back(g):
        return (-g,)

    return _record(out, (a,), back)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product, with row/scalar broadcasting."""
    a, b = _wrap(a), _wrap(b)
    out = Tensor(_check(a.value * b.value, "mul"))
    av, bv = a.value, b.value

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(out, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(_check(a.value / b.value, "div"))
    av, bv = a.value, b.value

    def back(g):
        return (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        )

    return _record(out, (a, b), back)


def matmul(a, b) -> Tensor:
    """Matrix product: (m,n)@(n,p) -> (m,p) or (m,n)@(n,) -> (m,)."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ValueError(f"matmul expects (m,n)@(n,p|n,), got {av.shape}@{bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {av.shape} @ {bv.shape}")
    out = Tensor(_check(av @ bv, "matmul"))

    if bv.ndim == 2:
        def back(g):
            return g @ bv.T, av.T @ g
    else:
        def back(g):
            return np.outer(g, bv), av.T @ g

    return _record(out, (a, b), back)


def matmul_const(op, x) -> Tensor:
    """Apply a constant linear operator (dense or scipy.sparse) to a tensor.

    Only ``x`` receives gradient: g_x = op.T @ g.
    """
    x = _wrap(x)
    opT = op.T
    out = Tensor(_check(np.asarray(op @ x.value), "matmul_const"))

    def back(g):
        return (np.asarray(opT @ g),)

    return _record(out, (x,), back)


def dot(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ValueError("dot expects two vectors")
    if a.value.shape != b.value.shape:
        raise ValueError(f"dot dimension mismatch: {a.value.shape} vs {b.value.shape}")
    out = Tensor(_check(a.value @ b.value, "dot"))
    av, bv = a.value, b.value

    def back(g):
        return g * bv, g * av

    return _record(out, (a, b), back)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = Tensor(_check(np.concatenate([p.value for p in parts], axis=axis), "concat"))
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(parts), back)


def tsum(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    out = Tensor(_check(a.value.sum(axis=axis), "sum"))
    shape = a.value.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if axis == 0:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.repeat(g[:, None], shape[1], axis=1),)

    return _record(out, (a,), back)


def gather_rows(a, idx) -> Tensor:
    """Select rows (2-D) or elements (1-D) by integer index, duplicates allowed."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.value[idx])
    shape = a.value.shape

    def back(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return (z,)

    return _record(out, (a,), back)


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum entries (1-D) or rows (2-D) of ``a`` grouped by segment id."""
    a = _wrap(a)
    segments = np.asarray(segments, dtype=np.intp)
    if a.value.ndim == 1:
        out_v = np.bincount(segments, weights=a.value, minlength=num_segments)
    else:
        out_v = np.zeros((num_segments, a.value.shape[1]))
        np.add.at(out_v, segments, a.value)
    out = Tensor(_check(out_v, "segment_sum"))

    def back(g):
        return (g[segments],)

    return _record(out, (a,), back)


def column(a, j: int) -> Tensor:
    a = _wrap(a)
    if a.value.ndim != 2:
        raise ValueError("column expects a matrix")
    out = Tensor(a.value[:, j].copy())
    shape = a.value.shape

    def back(g):
        z = np.zeros(shape)
        z[:, j] = g
        return (z,)

    return _record(out, (a,), back)


def vector_of(scalars: Sequence) -> Tensor:
    """Pack scalar tensors into a vector."""
    scalars = [_wrap(s) for s in scalars]
    out = Tensor(np.array([s.value for s in scalars]))

    def back(g):
        return tuple(np.asarray(gi) for gi in g)

    return _record(out, tuple(scalars), back)


def softmax(a) -> Tensor:
    """Softmax over a vector, or row-wise over a matrix. Max-shifted for stability."""
    a = _wrap(a)
    v = a.value
    if v.ndim == 1:
        e = np.exp(v - v.max())
        s = e / e.sum()
    else:
        e = np.exp(v - v.max(axis=1, keepdims=True))
        s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(_check(s, "softmax"))

    def back(g):
        if s.ndim == 1:
            return (s * (g - np.dot(s, g)),)
        inner = (s * g).sum(axis=1, keepdims=True)
        return (s * (g - inner),)

    return _record(out, (a,), back)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    v = a.value
    s = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    s[~pos] = ev / (1.0 + ev)
    out = Tensor(_check(s, "sigmoid"))

    def back(g):
        return (g * s * (1.0 - s),)

    return _record(out, (a,), back)


def exp(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(_check(np.exp(a.value), "exp"))
    ov = out.value

    def back(g):
        return (g * ov,)

    return _record(out, (a,), back)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(_check(np.tanh(a.value), "tanh"))
    ov = out.value

    def back(g):
        return (g * (1.0 - ov * ov),)

    return _record(out, (a,), back)


def log(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(a.value)
    out = Tensor(_check(v, "log"))
    av = a.value

    def back(g):
        return (g / av,)

    return _record(out, (a,), back)


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)), computed without underflow for large |x|."""
    a = _wrap(a)
    out = Tensor(_check(-np.logaddexp(0.0, -a.value), "log_sigmoid"))
    av = a.value

    def back(g):
        s = np.empty_like(av, dtype=np.float64)
        pos = av >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
        ev = np.exp(av[~pos])
        s[~pos] = ev / (1.0 + ev)
        return (g * (1.0 - s),)

    return _record(out, (a,), back)


def norm(a) -> Tensor:
    """Euclidean norm of all entries. Subgradient 0 at the origin."""
    a = _wrap(a)
    n = float(np.sqrt(np.sum(a.value * a.value)))
    out = Tensor(n)
    av = a.value

    def back(g):
        if n == 0.0:
            return (np.zeros_like(av),)
        return (g * av / n,)

    return _record(out, (a,), back)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    out = Tensor(_check(a.value * c, "scale"))

    def back(g):
        return (g * c,)

    return _record(out, (a,), back)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(_check(np.sqrt(a.value), "sqrt"))
    ov = out.value

    def back(g):
        return (g / (2.0 * ov),)

    return _record(out, (a,), back)


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient flows only where a > floor."""
    a = _wrap(a)
    out = Tensor(np.maximum(a.value, floor))
    mask = a.value > floor

    def back(g):
        return (g * mask,)

    return _record(out, (a,), back)


def element(a, i: int) -> Tensor:
    """Scalar element of a vector."""
    a = _wrap(a)
    if a.value.ndim != 1:
        raise ValueError("element expects a vector")
    out = Tensor(a.value[i])
    shape = a.value.shape

    def back(g):
        z = np.zeros(shape)
        z[i] = g
        return (z,)

    return _record(out, (a,), back)
