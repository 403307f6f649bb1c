"""Dense float64 tensors with a reverse-mode gradient tape.

Operations executed while a :class:`Tape` is active are recorded in execution
order whenever at least one input requires a gradient.  Outside a tape every
operation is a plain numpy computation, which is what evaluation uses.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from rnsent.errors import DimensionError, DomainError, NumericError, SingularMatrixError

PIVOT_TOL = 1e-12

_active_tapes: list["Tape"] = []


class Tensor:
    """Row-major float64 array that can take part in a gradient tape."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        # Index of the tape record that produced this tensor, if any.
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self):
        tape = _tape_of(self)
        if tape is None:
            raise RuntimeError("tensor was not produced on an active tape")
        tape.backward(self)


class Parameter(Tensor):
    """A named trainable tensor with an accumulated gradient of the same shape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Record:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; ``tape.backward(loss)`` walks the records in
    reverse and accumulates gradients into every leaf that requires one.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def _record(self, name, inputs, out_data, backward):
        out = Tensor(out_data, requires_grad=True)
        out.node = (self, len(self.records))
        for t in inputs:
            if isinstance(t, Tensor) and t.requires_grad and t.node is None:
                self.leaves[id(t)] = t
        self.records.append(_Record(name, inputs, out, backward))
        return out

    def backward(self, loss: Tensor):
        if loss.data.size != 1 or loss.ndim > 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None or loss.node[0] is not self:
            raise RuntimeError("loss was not recorded on this tape")
        if not np.isfinite(loss.data).all():
            raise NumericError(f"non-finite loss; first non-finite value produced by {self.first_nonfinite()!r}")

        grads = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records[: loss.node[1] + 1]):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, leaf in self.leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=np.float64).reshape(leaf.shape)
            else:
                leaf.grad += g

    def first_nonfinite(self):
        """Name of the first recorded operation whose output is not finite."""
        for i, rec in enumerate(self.records):
            if not np.isfinite(rec.output.data).all():
                return f"{rec.name}#{i}"
        return None


def backward(tape: Tape, loss: Tensor):
    tape.backward(loss)


def _tape_of(t):
    return t.node[0] if isinstance(t, Tensor) and t.node is not None else None


def _needs_tape(inputs):
    if not _active_tapes:
        return None
    for t in inputs:
        if isinstance(t, Tensor) and t.requires_grad:
            return _active_tapes[-1]
    return None


def _op(name, inputs, out_data, backward):
    tape = _needs_tape(inputs)
    if tape is None:
        return Tensor(out_data)
    return tape._record(name, inputs, out_data, backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: cannot combine shapes {a.shape} and {b.shape}") from None


# elementwise binary


def add(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    _check_broadcast("add", x, y)
    return _op("add", (a, b), x + y, lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    _check_broadcast("sub", x, y)
    return _op("sub", (a, b), x - y, lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)))


def mul(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    _check_broadcast("mul", x, y)
    return _op("mul", (a, b), x * y, lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def div(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    _check_broadcast("div", x, y)
    out = x / y
    return _op("div", (a, b), out, lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)))


def neg(a) -> Tensor:
    return _op("neg", (a,), -_data(a), lambda g: (-g,))


# elementwise unary


def tanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return _op("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    x = _data(a)
    # subgradient at exactly 0 is 0
    return _op("relu", (a,), np.maximum(x, 0.0), lambda g: (g * (x > 0),))


def sigmoid(a) -> Tensor:
    x = _data(a)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _op("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    out = np.exp(_data(a))
    return _op("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    x = _data(a)
    if np.any(x <= 0):
        raise DomainError("log of non-positive input")
    return _op("log", (a,), np.log(x), lambda g: (g / x,))


def abs(a) -> Tensor:  # noqa: A001
    x = _data(a)
    return _op("abs", (a,), np.abs(x), lambda g: (g * np.sign(x),))


def clip(a, lo: float, hi: float) -> Tensor:
    x = _data(a)
    inside = (x >= lo) & (x <= hi)
    return _op("clip", (a,), np.clip(x, lo, hi), lambda g: (g * inside,))


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    c = np.asarray(cond, dtype=bool)
    x, y = _data(a), _data(b)
    out = np.where(c, x, y)
    zero = np.zeros((), dtype=np.float64)
    return _op(
        "where",
        (a, b),
        out,
        lambda g: (_unbroadcast(np.where(c, g, zero), x.shape), _unbroadcast(np.where(c, zero, g), y.shape)),
    )


def elementwise(op: str, *args) -> Tensor:
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fn(*args)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "abs": abs,
}


# linear algebra


def matmul(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {x.shape} and {y.shape}")
    out = np.matmul(x, y)

    def backward(g):
        gx = np.matmul(g, np.swapaxes(y, -1, -2))
        if y.ndim == 2:
            gy = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gy = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return _op("matmul", (a, b), out, backward)


def lu_factor(a: np.ndarray):
    """LU factorisation with partial pivoting; raises on a near-zero pivot.

    The pivot tolerance is relative to the largest entry of the matrix.
    """
    if not np.isfinite(a).all():
        raise NumericError("lu_factor: matrix has non-finite entries")
    with warnings.catch_warnings():
        # an exactly singular matrix is reported below as SingularMatrixError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(np.abs(a).max(), 1.0e-300)
    if pivots.min() < PIVOT_TOL * scale:
        with np.errstate(all="ignore"):
            cond = float(np.linalg.cond(a))
        raise SingularMatrixError(f"matrix is singular to working precision (condition estimate {cond:.3e})", cond)
    return lu, piv


def _batched(a, fn):
    flat = a.reshape((-1,) + a.shape[-2:])
    return [fn(m) for m in flat]


def _check_square(name, x):
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise DimensionError(f"{name}: expected square matrices, got shape {x.shape}")


def matrix_inverse(a) -> Tensor:
    """Inverse of a square matrix (or a stack of them) via LU factorisation."""
    x = _data(a)
    _check_square("matrix_inverse", x)
    n = x.shape[-1]
    eye = np.eye(n)
    invs = _batched(x, lambda m: scipy.linalg.lu_solve(lu_factor(m), eye))
    out = np.stack(invs).reshape(x.shape)

    def backward(g):
        outT = np.swapaxes(out, -1, -2)
        return (-np.matmul(np.matmul(outT, g), outT),)

    return _op("inverse", (a,), out, backward)


def logdet(a) -> Tensor:
    """log|det A| from the LU factors; the gradient is ``A^{-T}``."""
    x = _data(a)
    _check_square("logdet", x)
    n = x.shape[-1]
    eye = np.eye(n)
    vals, invs = [], []
    for m in x.reshape((-1, n, n)):
        lu, piv = lu_factor(m)
        vals.append(np.log(np.abs(np.diag(lu))).sum())
        invs.append(scipy.linalg.lu_solve((lu, piv), eye))
    out = np.array(vals).reshape(x.shape[:-2])
    inv = np.stack(invs).reshape(x.shape)
    return _op("logdet", (a,), out, lambda g: (np.asarray(g)[..., None, None] * np.swapaxes(inv, -1, -2),))


def det_sign(a) -> np.ndarray:
    x = _data(a)
    return np.sign(np.linalg.det(x))


# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    x = _data(a)
    axes = _norm_axis(axis, x.ndim)
    out = x.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _op("sum", (a,), out, backward)


def reduce_max(a, axis=None, keepdims=False) -> Tensor:
    """Max along one axis; the gradient goes to the first (lowest-index) argmax."""
    x = _data(a)
    if axis is None:
        return reduce_max(reshape(a, (-1,)), 0, keepdims=False)
    (ax,) = _norm_axis(axis, x.ndim)
    if x.shape[ax] == 0:
        raise DimensionError("max over an empty axis")
    idx = np.expand_dims(np.argmax(x, axis=ax), ax)
    out = np.take_along_axis(x, idx, axis=ax)
    if not keepdims:
        out = np.squeeze(out, ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        gx = np.zeros_like(x)
        np.put_along_axis(gx, idx, g, axis=ax)
        return (gx,)

    return _op("max", (a,), out, backward)


def reduce(op: str, a, axis=None, keepdims=False) -> Tensor:
    if op == "sum":
        return reduce_sum(a, axis, keepdims)
    if op == "max":
        return reduce_max(a, axis, keepdims)
    raise ValueError(f"unknown reduction {op!r}")


def mean(a, axis=None, keepdims=False) -> Tensor:
    x = _data(a)
    count = np.prod([x.shape[i] for i in _norm_axis(axis, x.ndim)])
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


def softmax(a, axis=-1) -> Tensor:
    x = _data(a)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)
    return _op("softmax", (a,), out, lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1) -> Tensor:
    x = _data(a)
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _op("log_softmax", (a,), out, lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


softmax_log_normalize = softmax


# shape manipulation


def concat(parts, axis=-1) -> Tensor:
    datas = [_data(p) for p in parts]
    if len(datas) == 1:
        return as_tensor(parts[0])
    ref = datas[0]
    ax = axis % ref.ndim
    for d in datas[1:]:
        if d.ndim != ref.ndim or any(d.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise DimensionError(f"concat: shapes {[p.shape for p in datas]} disagree off axis {axis}")
    out = np.concatenate(datas, axis=ax)
    bounds = np.cumsum([d.shape[ax] for d in datas])[:-1]
    return _op("concat", tuple(parts), out, lambda g: tuple(np.split(g, bounds, axis=ax)))


def reshape(a, shape) -> Tensor:
    x = _data(a)
    return _op("reshape", (a,), x.reshape(shape), lambda g: (g.reshape(x.shape),))


def transpose(a, axes=None) -> Tensor:
    x = _data(a)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)
    return _op("transpose", (a,), np.transpose(x, axes), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1, ax2) -> Tensor:
    x = _data(a)
    return _op("swapaxes", (a,), np.swapaxes(x, ax1, ax2), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, index) -> Tensor:
    x = _data(a)
    out = x[index]

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)

    return _op("getitem", (a,), np.array(out, dtype=np.float64), backward)


def broadcast_to(a, shape) -> Tensor:
    x = _data(a)
    return _op("broadcast", (a,), np.broadcast_to(x, shape).copy(), lambda g: (_unbroadcast(g, x.shape),))


def dropout(a, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return a
    keep = rng.random(_data(a).shape) >= rate
    return mul(a, keep / (1.0 - rate))
