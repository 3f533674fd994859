"""Reverse-mode automatic differentiation on dense 2-D float64 matrices.

Every tensor is a (rows, cols) matrix; scalars are 1x1 and vectors are
column matrices. Operations record themselves on a tape, and a single
backward pass over the tape fills the ``grad`` field of every tensor
created with ``requires_grad=True``. The tape is rebuilt from scratch for
each training step, so the graph can change freely between steps.

Construction and backward are single-threaded; tensors are immutable once
written and may be read from worker threads.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

NORM_EPS = 1e-12  # rows with L2 norm below this are treated as zero vectors


class TapeOp:
    """One recorded operation: inputs, output and its backward rule."""

    __slots__ = ("kind", "inputs", "output", "backward_rule")

    def __init__(self, kind, inputs, output, backward_rule):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_rule = backward_rule


class Tape:
    """Ordered record of operations; creation order is a topological order."""

    def __init__(self):
        self.ops: list[TapeOp] = []

    def __len__(self):
        return len(self.ops)

    def record(self, kind, inputs, output, backward_rule):
        self.ops.append(TapeOp(kind, inputs, output, backward_rule))


_current_tape = Tape()


def active_tape() -> Tape:
    return _current_tape


def reset_tape() -> Tape:
    """Install a fresh tape (call once per training step)."""
    global _current_tape
    _current_tape = Tape()
    return _current_tape


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"tensor data must be at most 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """Dense float64 matrix, optionally participating in backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_flow", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        if not np.isfinite(self.data).all():
            raise ArithmeticError("tensor: non-finite entries in input data")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._flow = requires_grad
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor has shape {self.shape}, not 1x1")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the full op set lives in module functions below
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def t(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs_(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def make_op(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_rule: Callable[[np.ndarray], tuple]) -> Tensor:
    """Create the output tensor of an operation and record it if needed.

    ``backward_rule(grad_out)`` must return one gradient array (or None)
    per input, in order. Ops whose inputs carry no gradient flow are not
    recorded.
    """
    if not np.isfinite(out_data).all():
        raise ArithmeticError(f"{kind}: non-finite values in result")
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(np.asarray(out_data, dtype=np.float64))
    out.requires_grad = False
    out.grad = None
    out._tape = None
    out._flow = any(t._flow for t in inputs)
    if out._flow:
        tape = _current_tape
        out._tape = tape
        tape.record(kind, tuple(inputs), out, backward_rule)
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/dt into ``t.grad`` for every requires_grad tensor.

    Repeated calls without resetting grads accumulate, matching the usual
    gradient-accumulation semantics.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward: loss must be 1x1, got {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.accumulate_grad(np.ones((1, 1)))
        return
    tape = loss._tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    holders: dict[int, Tensor] = {id(loss): loss}
    for op in reversed(tape.ops):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        holders.pop(id(op.output), None)
        if op.output.requires_grad:
            op.output.accumulate_grad(g)
        in_grads = op.backward_rule(g)
        for t, gt in zip(op.inputs, in_grads):
            if gt is None or not t._flow:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = gt
                holders[key] = t
    for key, g in grads.items():
        t = holders[key]
        if t.requires_grad:
            t.accumulate_grad(g)


# ---------------------------------------------------------------------------
# shape helpers

def _check_broadcast(kind: str, sa, sb):
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{kind}: incompatible shapes {sa} and {sb}")
    return (max(sa[0], sb[0]), max(sa[1], sb[1]))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i in range(2) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise binary ops

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a.shape, b.shape)
    da, db, sa, sb = a.data, b.data, a.shape, b.shape
    return make_op("mul", (a, b), da * db,
                   lambda g: (_unbroadcast(g * db, sa), _unbroadcast(g * da, sb)))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a.shape, b.shape)
    da, db, sa, sb = a.data, b.data, a.shape, b.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = da / db
    return make_op("div", (a, b), out_data,
                   lambda g: (_unbroadcast(g / db, sa),
                              _unbroadcast(-g * da / (db * db), sb)))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    da, db = a.data, b.data
    return make_op("matmul", (a, b), da @ db,
                   lambda g: (g @ db.T, da.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = _lift(a)
    return make_op("transpose", (a,), a.data.T.copy(),
                   lambda g: (g.T.copy(),))


# ---------------------------------------------------------------------------
# elementwise unary ops

def neg(a: Tensor) -> Tensor:
    a = _lift(a)
    return make_op("neg", (a,), -a.data, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    return make_op("exp", (a,), out_data, lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    da = a.data
    return make_op("log", (a,), np.log(da), lambda g: (g / da,))


def sqrt(a: Tensor) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: input must be nonnegative")
    out_data = np.sqrt(a.data)
    safe = np.where(out_data > 0.0, out_data, 1.0)
    pos = a.data > 0.0
    return make_op("sqrt", (a,), out_data,
                   lambda g: (np.where(pos, 0.5 * g / safe, 0.0),))


def abs_(a: Tensor) -> Tensor:
    a = _lift(a)
    sign = np.sign(a.data)
    return make_op("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    return make_op("sigmoid", (a,), out_data,
                   lambda g: (g * out_data * (1.0 - out_data),))


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a single learnable slope (1x1 tensor) for the layer."""
    a, slope = _lift(a), _lift(slope)
    if slope.shape != (1, 1):
        raise ValueError(f"prelu: slope must be 1x1, got {slope.shape}")
    d = a.data
    pos = d > 0
    s = slope.data[0, 0]
    out_data = np.where(pos, d, s * d)
    return make_op("prelu", (a, slope), out_data,
                   lambda g: (np.where(pos, g, s * g),
                              np.sum(g * np.where(pos, 0.0, d)).reshape(1, 1)))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = _lift(a)
    d = a.data
    pos = d > 0
    return make_op("leaky_relu", (a,), np.where(pos, d, slope * d),
                   lambda g: (np.where(pos, g, slope * g),))


def softmax_rows(a: Tensor) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        return ((g - dot) * out_data,)

    return make_op("softmax_rows", (a,), out_data, back)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm; rows with norm < NORM_EPS map to zero."""
    a = _lift(a)
    d = a.data
    norms = np.sqrt((d * d).sum(axis=1, keepdims=True))
    ok = norms >= NORM_EPS
    safe = np.where(ok, norms, 1.0)
    out_data = np.where(ok, d / safe, 0.0)

    def back(g):
        dot = (g * d).sum(axis=1, keepdims=True)
        gin = g / safe - d * (dot / (safe ** 3))
        return (np.where(ok, gin, 0.0),)

    return make_op("l2_normalize_rows", (a,), out_data, back)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"cosine_matrix: feature dims differ, {a.shape} vs {b.shape}")
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)))


def gather_rows(a: Tensor, indices) -> Tensor:
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[0]} rows")
    n_rows, n_cols = a.shape

    def back(g):
        z = np.zeros((n_rows, n_cols))
        np.add.at(z, idx, g)
        return (z,)

    return make_op("gather_rows", (a,), a.data[idx], back)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a: Tensor) -> Tensor:
    a = _lift(a)
    shape = a.shape
    return make_op("sum", (a,), np.array([[a.data.sum()]]),
                   lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a: Tensor) -> Tensor:
    a = _lift(a)
    shape = a.shape
    n = a.data.size
    return make_op("mean", (a,), np.array([[a.data.mean()]]),
                   lambda g: (np.full(shape, g[0, 0] / n),))


def sum_rows(a: Tensor) -> Tensor:
    """Row sums as an (n, 1) column."""
    a = _lift(a)
    m = a.shape[1]
    return make_op("sum_rows", (a,), a.data.sum(axis=1, keepdims=True),
                   lambda g: (np.repeat(g, m, axis=1),))


def diag_part(a: Tensor) -> Tensor:
    """Diagonal of a square matrix as an (n, 1) column."""
    a = _lift(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"diag_part: matrix must be square, got {a.shape}")
    n = a.shape[0]

    def back(g):
        z = np.zeros((n, n))
        np.fill_diagonal(z, g.ravel())
        return (z,)

    return make_op("diag_part", (a,), np.diag(a.data).reshape(-1, 1).copy(), back)


# ---------------------------------------------------------------------------
# regularization / initialization

def dropout(a: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout; the identity map when ``training`` is False."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    a = _lift(a)
    if not training or rate == 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.shape) >= rate) / keep
    return make_op("dropout", (a,), a.data * mask, lambda g: (g * mask,))


def glorot_init(shape, seed, requires_grad: bool = True) -> Tensor:
    """Uniform Glorot initialization, deterministic for a given seed."""
    rows, cols = shape
    if rows <= 0 or cols <= 0:
        raise ValueError(f"glorot_init: dimensions must be positive, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    data = rng.uniform(-bound, bound, size=(rows, cols))
    return Tensor(data, requires_grad=requires_grad)
