"""scikit-learn style wrapper around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from rnsent.data import Example, make_batches
from rnsent.encoders import EncoderConfig
from rnsent.tasks import LabelSet, pair_features
from rnsent.training import Datasets, TrainConfig, predict, train


def _tokens(x):
    if isinstance(x, str):
        toks = x.split()
    else:
        toks = [str(t) for t in x]
    if not toks:
        raise ValueError("empty sentence in X")
    return toks


def check_text(X):
    """Normalise X to a list of token lists, or of (tokens, tokens) pairs."""
    if isinstance(X, str) or not hasattr(X, "__len__"):
        raise TypeError("X must be a sequence of sentences")
    if len(X) == 0:
        raise ValueError("X is empty")
    out = []
    for x in X:
        if isinstance(x, tuple) and len(x) == 2:
            out.append((_tokens(x[0]), _tokens(x[1])))
        else:
            out.append(_tokens(x))
    kinds = {isinstance(x, tuple) for x in out}
    if len(kinds) > 1:
        raise ValueError("X mixes single sentences and sentence pairs")
    return out


def _examples(X, y=None):
    out = []
    for i, x in enumerate(X):
        label = "" if y is None else str(y[i])
        if isinstance(x, tuple):
            out.append(Example(str(i), x[0], label, tokens2=x[1]))
        else:
            out.append(Example(str(i), x, label))
    return out


class RelationNetClassifier(ClassifierMixin, BaseEstimator):
    """Sentence (or sentence-pair) classifier over a relation-network encoder.

    ``X`` is a sequence of token lists or whitespace-tokenised strings; pairs
    are 2-tuples of those.  ``dev_size`` examples are held out of ``fit`` for
    early stopping.
    """

    def __init__(
        self,
        variant="recurrent-rn",
        tree_mode="latent",
        root_mode="multi",
        embedding_dim=100,
        hidden_dim=100,
        mlp_dim=100,
        steps=3,
        dropout=0.5,
        optimizer="adam",
        learning_rate=None,
        batch_size=32,
        max_epochs=50,
        patience=10,
        dev_size=0.1,
        seed=1,
    ):
        self.variant = variant
        self.tree_mode = tree_mode
        self.root_mode = root_mode
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.mlp_dim = mlp_dim
        self.steps = steps
        self.dropout = dropout
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.dev_size = dev_size
        self.seed = seed

    def _config(self) -> TrainConfig:
        enc = EncoderConfig(
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            mlp_dim=self.mlp_dim,
            steps=self.steps,
            tree_mode=self.tree_mode,
            variant=self.variant,
            root_mode=self.root_mode,
            dropout=self.dropout,
        )
        return TrainConfig(
            encoder=enc,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )

    def fit(self, X, y):
        X = check_text(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        check_classification_targets(y)
        if self.tree_mode == "supervised":
            raise ValueError("the estimator does not take gold trees; use tree_mode 'latent' or 'none'")
        config = self._config()
        self.classes_ = np.unique(y)
        labels = LabelSet([str(c) for c in self.classes_])
        examples = _examples(X, y)
        k = self.dev_size if isinstance(self.dev_size, (int, np.integer)) else int(round(self.dev_size * len(X)))
        k = max(1, min(k, len(X) - 1))
        data = Datasets.from_train(examples, labels, self.seed, k)
        self.report_, self.model_ = train(config, data)
        self.vocab_, self.labels_ = self.model_.vocab, labels
        self.n_features_out_ = config.encoder.output_dim * (4 if self.model_.pair else 1)
        return self

    def _batches(self, X):
        return make_batches(_examples(check_text(X)), 64, self.vocab_)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, _examples(check_text(X)), self.vocab_, None)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        """Sentence vectors from the encoder; pairs give the concatenated pair features."""
        check_is_fitted(self, "model_")
        out = []
        for batch in self._batches(X):
            q = self.model_.encode(batch.ids, batch.mask).sentence
            if self.model_.pair:
                q = pair_features(q, self.model_.encode(batch.ids2, batch.mask2).sentence)
            out.append(q.data)
        return np.concatenate(out, axis=0)
