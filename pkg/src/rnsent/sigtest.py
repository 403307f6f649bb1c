"""Paired approximate randomisation test for comparing two systems."""

from __future__ import annotations

import numpy as np

from rnsent.errors import DimensionError

_CHUNK = 1000


def approx_randomization_test(a, b, R: int = 10000, seed: int = 0) -> float:
    """Two-sided p-value for the difference in mean per-example score.

    Each of ``R`` shuffles swaps every pair ``(a_i, b_i)`` with probability
    one half; ``p = (1 + #{|shuffled diff| >= |observed diff|}) / (1 + R)``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"score vectors differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty score vectors")
    if R < 1:
        raise ValueError("R must be >= 1")
    d = a - b
    observed = abs(d.mean())
    # tolerate float summation order so exact ties count as ties
    thresh = observed - 1e-12 * max(1.0, np.abs(d).sum() / d.size)
    rng = np.random.default_rng(seed)
    count = 0
    done = 0
    while done < R:
        k = min(_CHUNK, R - done)
        signs = np.where(rng.random((k, d.size)) < 0.5, -1.0, 1.0)
        count += int((np.abs(signs @ d) / d.size >= thresh).sum())
        done += k
    return (1 + count) / (1 + R)


def correctness(pred_labels, gold_labels) -> np.ndarray:
    pred_labels, gold_labels = list(pred_labels), list(gold_labels)
    if len(pred_labels) != len(gold_labels):
        raise DimensionError("prediction and gold lists differ in length")
    return np.array([float(p == g) for p, g in zip(pred_labels, gold_labels)])
