"""Small neural building blocks on top of the tape tensors."""

from __future__ import annotations

import numpy as np

from rnsent import tensor as T
from rnsent.params import ParameterStore

NEG = -1e300


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int, rng, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.add(f"{name}.weight", glorot(rng, n_in, n_out))
        self.bias = store.add(f"{name}.bias", np.zeros(n_out)) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class ResidualMLP:
    """Two ReLU hidden layers with residual connections.

    The first residual is the identity when input and hidden widths agree
    and a learned projection otherwise.
    """

    def __init__(self, store: ParameterStore, name: str, n_in: int, width: int, rng):
        self.n_in, self.width = n_in, width
        self.w1 = store.add(f"{name}.w1", glorot(rng, n_in, width))
        self.b1 = store.add(f"{name}.b1", np.zeros(width))
        self.w2 = store.add(f"{name}.w2", glorot(rng, width, width))
        self.b2 = store.add(f"{name}.b2", np.zeros(width))
        self.proj = store.add(f"{name}.proj", glorot(rng, n_in, width)) if n_in != width else None

    def _first(self, pre, residual):
        return T.relu(pre + self.b1) + residual

    def _second(self, h1):
        return T.relu(T.matmul(h1, self.w2) + self.b2) + h1

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        residual = T.matmul(x, self.proj) if self.proj is not None else x
        return self._second(self._first(T.matmul(x, self.w1), residual))


class PairMLP(ResidualMLP):
    """Relation function over ordered pairs ``[a; b]`` of equal-width vectors.

    The first layer acts on the concatenation; its weight is split into the
    ``a`` and ``b`` halves so all pairs of two sets can be scored without
    materialising every concatenated input.
    """

    def __init__(self, store: ParameterStore, name: str, obj_dim: int, width: int, rng):
        super().__init__(store, name, 2 * obj_dim, width, rng)
        self.obj_dim = obj_dim

    def _halves(self, w):
        d = self.obj_dim
        return w[:d], w[d:]

    def _check(self, *xs):
        for x in xs:
            if x.shape[-1] != self.obj_dim:
                raise ValueError(f"expected object width {self.obj_dim}, got {x.shape[-1]}")

    def pairs(self, a, b):
        """g(a_k, b_k) for aligned rows ``(..., k, d)``."""
        self._check(a, b)
        wa, wb = self._halves(self.w1)
        pre = T.matmul(a, wa) + T.matmul(b, wb)
        if self.proj is None:
            residual = T.concat([a, b], axis=-1)
        else:
            pa, pb = self._halves(self.proj)
            residual = T.matmul(a, pa) + T.matmul(b, pb)
        return self._second(self._first(pre, residual))

    def grid(self, a, b):
        """g(a_i, b_j) for all i, j: ``(B, I, d) x (B, J, d) -> (B, I, J, width)``."""
        self._check(a, b)
        wa, wb = self._halves(self.w1)
        B, I, J, w = a.shape[0], a.shape[1], b.shape[1], self.width

        def outer(x, y):
            return T.reshape(x, (B, I, 1, w)) + T.reshape(y, (B, 1, J, w))

        pre = outer(T.matmul(a, wa), T.matmul(b, wb))
        if self.proj is None:
            d = self.obj_dim
            residual = T.concat(
                [
                    T.broadcast_to(T.reshape(a, (B, I, 1, d)), (B, I, J, d)),
                    T.broadcast_to(T.reshape(b, (B, 1, J, d)), (B, I, J, d)),
                ],
                axis=-1,
            )
        else:
            pa, pb = self._halves(self.proj)
            residual = outer(T.matmul(a, pa), T.matmul(b, pb))
        return self._second(self._first(pre, residual))

    def __call__(self, a, b):
        return self.pairs(a, b)


class LSTMCell:
    def __init__(self, store: ParameterStore, name: str, n_in: int, hidden: int, rng):
        self.n_in, self.hidden = n_in, hidden
        self.w_in = store.add(f"{name}.w_in", glorot(rng, n_in, 4 * hidden))
        self.w_h = store.add(f"{name}.w_h", glorot(rng, hidden, 4 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # forget gate
        self.bias = store.add(f"{name}.bias", bias)

    def __call__(self, x, h, c):
        H = self.hidden
        gates = T.matmul(x, self.w_in) + T.matmul(h, self.w_h) + self.bias
        i = T.sigmoid(gates[..., :H])
        f = T.sigmoid(gates[..., H : 2 * H])
        g = T.tanh(gates[..., 2 * H : 3 * H])
        o = T.sigmoid(gates[..., 3 * H :])
        c_new = f * c + i * g
        return o * T.tanh(c_new), c_new


class BiLSTM:
    """Left-to-right and right-to-left LSTMs, outputs concatenated per position."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, hidden: int, rng):
        self.hidden = hidden
        self.fwd = LSTMCell(store, f"{name}.fwd", n_in, hidden, rng)
        self.bwd = LSTMCell(store, f"{name}.bwd", n_in, hidden, rng)

    def _run(self, cell, x, mask, order):
        B = x.shape[0]
        h = T.Tensor(np.zeros((B, self.hidden)))
        c = T.Tensor(np.zeros((B, self.hidden)))
        outs = [None] * x.shape[1]
        for t in order:
            keep = mask[:, t : t + 1]
            h_new, c_new = cell(x[:, t, :], h, c)
            h = T.where(keep, h_new, h)
            c = T.where(keep, c_new, c)
            outs[t] = T.reshape(T.mul(h, keep), (B, 1, self.hidden))
        return T.concat(outs, axis=1)

    def __call__(self, x, mask):
        x = T.as_tensor(x)
        if x.shape[1] == 0:
            raise ValueError("cannot encode an empty sentence")
        n = x.shape[1]
        mask = np.asarray(mask, dtype=bool)
        forward = self._run(self.fwd, x, mask, range(n))
        backward = self._run(self.bwd, x, mask, range(n - 1, -1, -1))
        return T.concat([forward, backward], axis=-1)


def masked_max(x, valid, axis):
    """Max over ``axis`` restricted to ``valid`` entries; zero where none are valid."""
    valid = np.asarray(valid, dtype=bool)
    filled = T.where(valid, x, NEG)
    out = T.reduce_max(filled, axis=axis)
    any_valid = valid.any(axis=axis)
    return T.where(any_valid, out, 0.0)


def masked_sum(x, valid, axis):
    return T.reduce_sum(T.mul(x, np.asarray(valid, dtype=np.float64)), axis=axis)
