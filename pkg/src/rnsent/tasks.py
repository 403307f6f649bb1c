"""Classification heads, pair features, loss and accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rnsent import tensor as T
from rnsent.errors import DataFormatError, DimensionError
from rnsent.layers import Linear
from rnsent.params import ParameterStore

TREC_LABELS = ("ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM")
TREC_NAMES = {
    "ABBR": "abbreviation",
    "DESC": "description",
    "ENTY": "entity",
    "HUM": "human",
    "LOC": "location",
    "NUM": "numeric value",
}


class LabelSet:
    """Ordered, duplicate-free labels with stable indices."""

    def __init__(self, labels: Sequence[str]):
        labels = [str(x) for x in labels]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")
        if not labels:
            raise ValueError("a label set needs at least one label")
        self.labels = labels
        self._index = {lab: i for i, lab in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self._index

    def __eq__(self, other):
        return isinstance(other, LabelSet) and other.labels == self.labels

    def __repr__(self):
        return f"LabelSet({self.labels})"

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def label(self, index: int) -> str:
        return self.labels[index]


@dataclass
class Prediction:
    probs: np.ndarray
    label: int


def pair_features(s1, s2) -> T.Tensor:
    """``[s1; s2; s1 * s2; |s1 - s2|]`` along the last axis."""
    s1, s2 = T.as_tensor(s1), T.as_tensor(s2)
    if s1.shape != s2.shape:
        raise DimensionError(f"pair_features: widths differ, {s1.shape} vs {s2.shape}")
    return T.concat([s1, s2, T.mul(s1, s2), T.abs(T.sub(s1, s2))], axis=-1)


class ClassifierHead:
    """One-hidden-layer ReLU MLP followed by a linear layer to label logits."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_labels: int, rng, hidden: int | None = None):
        hidden = hidden or n_in
        self.n_in = n_in
        self.hidden = Linear(store, f"{name}.hidden", n_in, hidden, rng)
        self.out = Linear(store, f"{name}.out", hidden, n_labels, rng)

    def logits(self, q, rng=None, dropout: float = 0.0):
        q = T.as_tensor(q)
        if q.shape[-1] != self.n_in:
            raise DimensionError(f"classifier expects width {self.n_in}, got {q.shape[-1]}")
        h = T.relu(self.hidden(q))
        return self.out(T.dropout(h, dropout, rng))

    def __call__(self, q):
        return T.softmax(self.logits(q), axis=-1)


def classify(head: ClassifierHead, q) -> list[Prediction]:
    probs = np.atleast_2d(head(q).data)
    return [Prediction(p, int(np.argmax(p))) for p in probs]


def cross_entropy(logits, gold) -> T.Tensor:
    """Mean ``-log p(gold)`` over the batch, from log-softmax of ``logits``."""
    logits = T.as_tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, -1))
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    k = logits.shape[-1]
    if gold.shape[0] != logits.shape[0]:
        raise DimensionError("one gold label per prediction is required")
    if (gold < 0).any() or (gold >= k).any():
        raise IndexError(f"gold label index out of range [0, {k})")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(gold)), gold]
    return T.mul(T.reduce_sum(picked), -1.0 / len(gold))


def accuracy(preds, golds) -> float:
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.ndim == 2:
        preds = preds.argmax(axis=1)
    if len(preds) == 0:
        raise ValueError("accuracy of an empty prediction set")
    if len(preds) != len(golds):
        raise ValueError("predictions and gold labels differ in length")
    return float(np.mean(preds == golds))


def write_predictions(path, ids, golds, probs, labels: LabelSet):
    """TSV: id, gold label, predicted label, one probability column per class."""
    probs = np.asarray(probs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "gold", "pred", *[f"p_{lab}" for lab in labels]])
        for i, g, p in zip(ids, golds, probs):
            gold = labels.label(g) if isinstance(g, (int, np.integer)) else g
            w.writerow([i, gold, labels.label(int(np.argmax(p))), *[repr(float(x)) for x in p]])


def read_predictions(path):
    """Inverse of :func:`write_predictions`: (ids, gold labels, predicted labels, probs)."""
    ids, golds, preds, probs = [], [], [], []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0][:3] != ["id", "gold", "pred"]:
        raise DataFormatError("missing prediction header", path=path, line=1)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise DataFormatError(f"expected {len(rows[0])} fields, got {len(row)}", path=path, line=lineno)
        ids.append(row[0])
        golds.append(row[1])
        preds.append(row[2])
        probs.append([float(x) for x in row[3:]])
    return ids, golds, preds, np.array(probs)
