"""Adam and Adagrad over a ParameterStore, with global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from rnsent.errors import DimensionError, NumericError
from rnsent.params import ParameterStore

OPTIMIZERS = ("adam", "adagrad")
DEFAULT_LR = {"adam": 1e-4, "adagrad": 0.01}


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise DimensionError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")


class AdamState:
    def __init__(self, shapes):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.step = 0


class AdagradState:
    def __init__(self, shapes):
        self.sq = [np.zeros(s) for s in shapes]
        self.step = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of the arrays in ``params``, in place."""
    _check_shapes(params, grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def adagrad_step(params, grads, state: AdagradState, lr: float, eps=1e-8):
    """``p -= lr * g / sqrt(sum g^2 + eps)`` per coordinate, in place."""
    _check_shapes(params, grads)
    state.step += 1
    for p, g, s in zip(params, grads, state.sq):
        s += g * g
        p -= lr * g / np.sqrt(s + eps)
    return params, state


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm: float | None):
    """Scale every gradient by ``max_norm / norm`` when the joint norm exceeds it."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError(f"gradient norm is {norm}")
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Optimizer:
    """Steps every parameter of a store, then zeroes the gradients."""

    def __init__(self, store: ParameterStore, name: str = "adam", lr: float | None = None, clip: float | None = 5.0):
        if name not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {name!r}")
        lr = DEFAULT_LR[name] if lr is None else float(lr)
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.store = store
        self.name = name
        self.lr = lr
        self.clip = clip
        shapes = [p.data.shape for p in store]
        self.state = AdamState(shapes) if name == "adam" else AdagradState(shapes)

    def step(self) -> float:
        params = [p.data for p in self.store]
        grads = [p.grad for p in self.store]
        norm = clip_by_global_norm(grads, self.clip)
        if self.name == "adam":
            adam_step(params, grads, self.state, self.lr)
        else:
            adagrad_step(params, grads, self.state, self.lr)
        self.store.zero_grad()
        return norm
