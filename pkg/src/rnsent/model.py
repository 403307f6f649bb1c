"""End-to-end network: embeddings, sentence encoder and classification head."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from rnsent import tensor as T
from rnsent import trees
from rnsent.encoders import EncoderConfig, EncoderOutput, SentenceEncoder
from rnsent.params import ParameterStore, load_checkpoint, save_checkpoint
from rnsent.tasks import ClassifierHead, pair_features

EMBED_INIT = 0.05


class RelationNetModel:
    """Embeddings -> encoder -> (pair features) -> one-hidden-layer softmax head."""

    def __init__(
        self,
        config: EncoderConfig,
        vocab_size: int,
        n_labels: int,
        rng: np.random.Generator,
        pair: bool = False,
        head_dim: int | None = None,
        embeddings: np.ndarray | None = None,
    ):
        self.config = config
        self.vocab_size = vocab_size
        self.n_labels = n_labels
        self.pair = pair
        self.head_dim = head_dim
        self.store = ParameterStore()
        if embeddings is None:
            embeddings = rng.uniform(-EMBED_INIT, EMBED_INIT, size=(vocab_size, config.embedding_dim))
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape != (vocab_size, config.embedding_dim):
            raise ValueError(f"embedding table shape {embeddings.shape} != {(vocab_size, config.embedding_dim)}")
        self.embedding = self.store.add("embedding", embeddings)
        self.encoder = SentenceEncoder(config, self.store, rng)
        width = config.output_dim * (4 if pair else 1)
        self.head = ClassifierHead(self.store, "head", width, n_labels, rng, hidden=head_dim)

    @property
    def parameters(self):
        return list(self.store)

    def embed(self, ids):
        return self.embedding[np.asarray(ids, dtype=np.int64)]

    def encode(self, ids, mask, heads=None, rng=None) -> EncoderOutput:
        return self.encoder(self.embed(ids), mask, heads=heads, rng=rng)

    def logits(self, batch, rng=None):
        out = self.encode(batch.ids, batch.mask, batch.heads, rng)
        q = out.sentence
        if self.pair:
            out2 = self.encode(batch.ids2, batch.mask2, batch.heads2, rng)
            q = pair_features(q, out2.sentence)
        return self.head.logits(q, rng=rng, dropout=0.0)

    def predict_proba(self, batch) -> np.ndarray:
        return T.softmax(self.logits(batch), axis=-1).data

    def decode_trees(self, ids, mask):
        """CLE trees over the arc scores plus the marginal matrices, one per sentence."""
        if self.config.tree_mode != "latent":
            raise ValueError(
                f"tree decoding needs a latent-tree model; this one has tree_mode={self.config.tree_mode!r}"
            )
        enc = self.encoder
        O = enc.objects(self.embed(ids), mask)
        O_ext = enc.extend(O)
        P, scores = enc.marginals(O_ext, mask)
        out = []
        for b, L in enumerate(np.asarray(mask, dtype=bool).sum(axis=1)):
            s = scores.data[b, : L + 1, :L]
            out.append((trees.cle_decode(s, self.config.root_mode), P.data[b, : L + 1, :L], s))
        return out

    # persistence

    def meta(self) -> dict:
        return {
            "encoder": self.config.to_dict(),
            "vocab_size": self.vocab_size,
            "n_labels": self.n_labels,
            "pair": self.pair,
            "head_dim": self.head_dim,
        }

    def save(self, path, extra: dict | None = None):
        """Parameters to ``path`` (RNSX1) and metadata to ``path + '.json'``."""
        save_checkpoint(path, self.store)
        meta = self.meta()
        if extra:
            meta.update(extra)
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        meta = json.loads(Path(str(path) + ".json").read_text())
        config = EncoderConfig(**meta["encoder"])
        model = cls(
            config,
            meta["vocab_size"],
            meta["n_labels"],
            np.random.default_rng(0),
            pair=meta["pair"],
            head_dim=meta.get("head_dim"),
        )
        model.store.load_state(load_checkpoint(path))
        return model, meta
