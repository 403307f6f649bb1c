"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from rnsent.tensor import Tape, Tensor

DEFAULT_EPS = (1e-4, 1e-5, 1e-6)
# central differences lose about this many ulps of |f| per evaluation pair
_ROUNDOFF_ULPS = 16.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / (|a| + |n| + 1e-12)`` with ``|.|`` the Euclidean norm of the whole tensor."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.size == 0:
        return 0.0
    num = np.linalg.norm(analytic - numeric)
    return float(num / (np.linalg.norm(analytic) + np.linalg.norm(numeric) + 1e-12))


def resolution(f_value: float, eps: float, size: int) -> float:
    """Norm below which a central-difference gradient of ``size`` entries is roundoff."""
    return _ROUNDOFF_ULPS * np.finfo(np.float64).eps * max(1.0, abs(f_value)) / eps * np.sqrt(size)


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def numeric_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float) -> list[np.ndarray]:
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        out.append(g)
    return out


@dataclass
class GradCheckReport:
    """Per-tensor errors (best over step sizes) and the tensors too small to resolve."""

    errors: dict[str, float] = field(default_factory=dict)
    best_eps: dict[str, float] = field(default_factory=dict)
    unresolved: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float | Sequence[float] = DEFAULT_EPS,
) -> GradCheckReport:
    """Compare tape and central-difference gradients tensor by tensor.

    Each tensor keeps its smallest error over the step sizes, since the best
    step depends on its curvature and on nearby ReLU/max kinks.  A tensor whose
    analytic and numeric norms both fall below :func:`resolution` at every step
    has a gradient the differences cannot measure; it is listed in
    ``unresolved`` with error 0 instead of a noise-over-noise ratio.
    """
    params = list(params)
    steps = [eps] if np.isscalar(eps) else list(eps)
    analytic = analytic_gradients(f, params)
    f0 = float(f().data)
    report = GradCheckReport()
    names = [getattr(p, "name", None) or f"param{i}" for i, p in enumerate(params)]
    small = {name: True for name in names}
    for h in steps:
        numeric = numeric_gradients(f, params, h)
        for name, a, n in zip(names, analytic, numeric):
            floor = resolution(f0, h, a.size)
            if np.linalg.norm(a) > floor or np.linalg.norm(n) > floor:
                small[name] = False
            err = relative_error(a, n)
            if err < report.errors.get(name, np.inf):
                report.errors[name] = err
                report.best_eps[name] = h
    for name in names:
        if small[name]:
            report.unresolved.append(name)
            report.errors[name] = 0.0
    return report


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float | Sequence[float] = DEFAULT_EPS,
) -> float:
    """Max over parameter tensors of the relative error from :func:`gradient_check`.

    ``f`` must be deterministic and return a scalar Tensor.
    """
    return gradient_check(f, params, eps).max_error
