"""Training loop, evaluation, grid search and run reports."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from rnsent import tensor as T
from rnsent.data import Example, Vocabulary, make_batches, split_validation
from rnsent.encoders import EncoderConfig
from rnsent.model import RelationNetModel
from rnsent.optim import DEFAULT_LR, OPTIMIZERS, Optimizer
from rnsent.tasks import LabelSet, accuracy, cross_entropy

log = logging.getLogger(__name__)

STREAMS = ("init", "dropout", "split", "shuffle")
DEFAULT_GRID = {"optimizer": ["adam", "adagrad"], "learning_rate": [1e-4, 1e-2]}


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    optimizer: str = "adam"
    learning_rate: float | None = None
    dropout: float | None = None
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    seed: int = 1
    clip_norm: float | None = 5.0
    head_dim: int | None = None
    dev_size: int = 500
    min_freq: int = 1
    lowercase: bool = False
    embeddings: str | None = None
    grid: dict | None = None

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.dropout is not None:
            self.encoder = replace(self.encoder, dropout=self.dropout)

    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.optimizer] if self.learning_rate is None else self.learning_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each source of randomness, all from one master seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


@dataclass
class Datasets:
    train: list[Example]
    dev: list[Example]
    labels: LabelSet
    test: list[Example] | None = None
    vocab: Vocabulary | None = None
    embeddings: np.ndarray | None = None

    @classmethod
    def from_train(cls, train, labels, seed, dev_size, test=None, **kw):
        """Hold out ``dev_size`` training examples for validation."""
        stream = seed_streams(seed)["split"]
        rest, dev = split_validation(train, dev_size, int(stream.integers(2**32)))
        return cls(rest, dev, labels, test, **kw)


@dataclass
class RunReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = 0.0
    checkpoint: str | None = None
    test_accuracy: float | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [("epoch", "train_loss", "dev_acc")]
        for e in self.epochs:
            mark = " *" if e["epoch"] == self.best_epoch else ""
            rows.append((str(e["epoch"]), f"{e['train_loss']:.4f}", f"{e['dev_accuracy']:.4f}{mark}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        test = "n/a" if self.test_accuracy is None else f"{self.test_accuracy:.4f}"
        lines.append(f"best epoch {self.best_epoch}: dev {self.best_dev_accuracy:.4f}, test {test}")
        lines.append(f"wall clock {self.wall_clock:.1f}s")
        return "\n".join(lines)


def build_model(config: TrainConfig, vocab: Vocabulary, labels: LabelSet, rng, pair=False, embeddings=None):
    return RelationNetModel(
        config.encoder,
        len(vocab),
        len(labels),
        rng,
        pair=pair,
        head_dim=config.head_dim,
        embeddings=embeddings,
    )


def predict(model: RelationNetModel, examples: Sequence[Example], vocab, labels, batch_size=64) -> np.ndarray:
    """Class probabilities, dropout off, in example order."""
    out = []
    for batch in make_batches(examples, batch_size, vocab, labels):
        out.append(model.predict_proba(batch))
    return np.concatenate(out, axis=0)


def evaluate(model, examples, vocab, labels, batch_size=64) -> float:
    return evaluate_full(model, examples, vocab, labels, batch_size)[0]


def evaluate_full(model, examples, vocab, labels, batch_size=64) -> tuple[float, float]:
    """(accuracy, mean negative log-likelihood) with dropout off."""
    probs = predict(model, examples, vocab, labels, batch_size)
    gold = np.array([labels.index(e.label) for e in examples])
    nll = float(-np.mean(np.log(np.maximum(probs[np.arange(len(gold)), gold], 1e-300))))
    return accuracy(probs, gold), nll


def _sentences(examples):
    for e in examples:
        yield e.tokens
        if e.is_pair:
            yield e.tokens2


def train(
    config: TrainConfig, data: Datasets, out_dir=None, callback=None
) -> tuple[RunReport, RelationNetModel]:
    """Train with early stopping on dev accuracy and return the report plus the best model.

    With ``out_dir`` the best-dev parameters are written there as
    ``best.rnsx`` (with its ``.json`` sidecar); otherwise they are kept in
    memory.  The returned model holds the best-dev parameters.
    ``callback(epoch, model, vocab)`` runs after each dev evaluation.
    """
    t0 = time.perf_counter()
    streams = seed_streams(config.seed)
    vocab = data.vocab or Vocabulary.build(
        _sentences(data.train), min_freq=config.min_freq, lowercase=config.lowercase
    )
    pair = bool(data.train) and data.train[0].is_pair
    model = build_model(config, vocab, data.labels, streams["init"], pair, data.embeddings)
    opt = Optimizer(model.store, config.optimizer, config.lr, config.clip_norm)
    report = RunReport(config=config.to_dict())
    best_state = model.store.state()
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "best.rnsx"
    extra = {"vocab": vocab.to_dict(), "labels": list(data.labels)}
    stale = 0
    best_loss = np.inf
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for batch in make_batches(data.train, config.batch_size, vocab, data.labels, streams["shuffle"]):
            with T.Tape() as tape:
                loss = cross_entropy(model.logits(batch, rng=streams["dropout"]), batch.labels)
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.data) * len(batch))
        train_loss = sum(losses) / len(data.train)
        dev_acc, dev_loss = evaluate_full(model, data.dev, vocab, data.labels)
        report.epochs.append(
            {"epoch": epoch, "train_loss": train_loss, "dev_accuracy": dev_acc, "dev_loss": dev_loss}
        )
        log.info("epoch %d loss %.4f dev %.4f", epoch, train_loss, dev_acc)
        if callback is not None:
            callback(epoch, model, vocab)
        improved = epoch == 1 or dev_acc > report.best_dev_accuracy
        # equal accuracy with lower dev loss replaces the checkpoint but does not reset patience
        if improved or (dev_acc == report.best_dev_accuracy and dev_loss < best_loss):
            report.best_epoch, report.best_dev_accuracy, best_loss = epoch, dev_acc, dev_loss
            best_state = model.store.state()
            if ckpt is not None:
                model.save(ckpt, extra)
        stale = 0 if improved else stale + 1
        if stale >= config.patience:
            break
    model.store.load_state(best_state)
    model.vocab, model.labels = vocab, data.labels
    if data.test:
        report.test_accuracy = evaluate(model, data.test, vocab, data.labels)
    report.checkpoint = None if ckpt is None else str(ckpt)
    report.wall_clock = time.perf_counter() - t0
    return report, model


def _set_axis(config: TrainConfig, name: str, value) -> TrainConfig:
    if name.startswith("encoder."):
        key = name.split(".", 1)[1]
        return replace(config, encoder=replace(config.encoder, **{key: value}), grid={})
    if name == "encoder" or name not in {f.name for f in fields(TrainConfig)}:
        raise ValueError(f"unknown grid axis {name!r}")
    return replace(config, **{name: value}, grid={})


def grid_points(config: TrainConfig) -> list[TrainConfig]:
    """Cartesian product of ``config.grid`` axes, in enumeration order.

    An unset grid searches :data:`DEFAULT_GRID`; an empty one is an error.
    """
    axes = DEFAULT_GRID if config.grid is None else config.grid
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ValueError("grid search needs at least one axis and every axis needs a value")
    names = list(axes)
    points = []
    for combo in itertools.product(*(axes[n] for n in names)):
        c = config
        for n, v in zip(names, combo):
            c = _set_axis(c, n, v)
        points.append(c)
    return points


def grid_search(config: TrainConfig, data: Datasets, out_dir=None):
    """Train every grid point; the best dev accuracy wins and ties go to the earlier point."""
    points = grid_points(config)
    reports = []
    best = None
    for i, point in enumerate(points):
        sub = None if out_dir is None else Path(out_dir) / f"point{i:03d}"
        report, _ = train(point, data, sub)
        reports.append(report)
        if best is None or report.best_dev_accuracy > reports[best].best_dev_accuracy:
            best = i
    return points[best], reports, best
