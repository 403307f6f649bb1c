"""Relation-network sentence encoders with optional dependency-tree constraints.

All functions work on padded batches: objects ``O`` are ``(B, n, D)`` with a
boolean word mask ``(B, n)``; ``O_ext`` prepends the learned root object
as row 0.  Marginal matrices follow the ``(B, n + 1, n)`` layout of
:mod:`rnsent.trees`; head arrays are ``(B, n)`` with -1 on padding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from rnsent import tensor as T
from rnsent import trees
from rnsent.layers import BiLSTM, LSTMCell, Linear, PairMLP, ResidualMLP, masked_max, masked_sum
from rnsent.params import ParameterStore

VARIANTS = ("flat-rn", "intra-attn", "recurrent-rn", "structured-attn-baseline", "bow", "bilstm-max")
TREE_MODES = ("none", "supervised", "latent")
AGGREGATIONS = ("sum", "max")
POTENTIAL_CLAMP = 30.0
POTENTIAL_INIT = 0.1


@dataclass
class EncoderConfig:
    embedding_dim: int = 100
    hidden_dim: int = 100
    mlp_dim: int = 100
    attn_dim: int | None = None
    aggregation: str = "max"
    pooling: str = "max"
    steps: int = 3
    tree_mode: str = "latent"
    variant: str = "recurrent-rn"
    root_mode: str = "multi"
    dropout: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.tree_mode not in TREE_MODES:
            raise ValueError(f"tree_mode must be one of {TREE_MODES}, got {self.tree_mode!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.pooling != "max":
            raise ValueError("only max pooling is supported")
        if self.root_mode not in trees.ROOT_MODES:
            raise ValueError(f"root_mode must be one of {trees.ROOT_MODES}")
        for name in ("embedding_dim", "hidden_dim", "mlp_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.attn_dim is not None and self.attn_dim <= 0:
            raise ValueError("attn_dim must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.variant in ("recurrent-rn", "structured-attn-baseline") and self.tree_mode == "none":
            raise ValueError(f"{self.variant} needs tree_mode 'supervised' or 'latent'")
        if self.variant in ("bow", "bilstm-max") and self.tree_mode != "none":
            raise ValueError(f"{self.variant} does not use trees; set tree_mode='none'")

    @property
    def object_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def context_dim(self) -> int:
        return self.attn_dim or self.object_dim

    @property
    def output_dim(self) -> int:
        return {
            "flat-rn": self.mlp_dim,
            "intra-attn": self.context_dim,
            "structured-attn-baseline": self.context_dim,
            "recurrent-rn": self.object_dim,
            "bow": self.embedding_dim,
            "bilstm-max": self.object_dim,
        }[self.variant]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    sentence: T.Tensor
    words: T.Tensor | None = None
    marginals: T.Tensor | None = None
    scores: T.Tensor | None = None
    extras: dict = field(default_factory=dict)


def lengths_of(mask) -> np.ndarray:
    return np.asarray(mask, dtype=bool).sum(axis=1)


def _safe_heads(heads):
    heads = np.asarray(heads, dtype=np.int64)
    return np.where(heads < 0, 0, heads)


def gather_rows(x, index):
    """``out[b, k] = x[b, index[b, k]]`` for ``x`` of shape (B, N, D)."""
    index = np.asarray(index, dtype=np.int64)
    return x[np.arange(index.shape[0])[:, None], index]


def pool(words, mask):
    """Columnwise max over the real words of each sentence."""
    return masked_max(words, np.asarray(mask, dtype=bool)[:, :, None], axis=1)


def bow_encode(embedded, mask):
    mask = np.asarray(mask, dtype=bool)
    total = masked_sum(embedded, mask[:, :, None], axis=1)
    return T.mul(total, 1.0 / lengths_of(mask)[:, None])


def _aggregate(x, valid, how, axis):
    if how == "sum":
        return masked_sum(x, valid, axis)
    return masked_max(x, valid, axis)


def _flatten_pairs(x):
    B, I, J, W = x.shape
    return T.reshape(x, (B, I * J, W))


def _latent_valid(marginals, mask):
    n = marginals.shape[-1]
    structural = trees.arc_mask(n, lengths_of(mask))
    # only arcs that carry probability take part in a max
    return structural & (T.as_tensor(marginals).data > 0)


class SentenceEncoder:
    """Builds and applies one encoder variant; parameters live in ``store``."""

    def __init__(self, config: EncoderConfig, store: ParameterStore, rng: np.random.Generator, prefix="enc"):
        self.config = cfg = config
        self.store = store
        D, M, K = cfg.object_dim, cfg.mlp_dim, cfg.context_dim
        p = prefix
        self.bilstm = None
        if cfg.variant != "bow":
            self.bilstm = BiLSTM(store, f"{p}.bilstm", cfg.embedding_dim, cfg.hidden_dim, rng)
        self.root = None
        if cfg.tree_mode != "none":
            self.root = store.add(f"{p}.root", rng.uniform(-0.1, 0.1, size=D))
        if cfg.tree_mode == "latent":
            self.pot_w = store.add(f"{p}.potential.w", rng.normal(scale=POTENTIAL_INIT / np.sqrt(D), size=(D, D)))
            self.pot_u = store.add(f"{p}.potential.u", rng.normal(scale=POTENTIAL_INIT / np.sqrt(D), size=D))
            self.pot_v = store.add(f"{p}.potential.v", rng.normal(scale=POTENTIAL_INIT / np.sqrt(D), size=D))
            self.pot_b = store.add(f"{p}.potential.b", np.zeros(()))
        if cfg.variant in ("flat-rn", "intra-attn", "recurrent-rn"):
            self.g = PairMLP(store, f"{p}.g", D, M, rng)
        if cfg.variant in ("flat-rn", "intra-attn"):
            self.f = ResidualMLP(store, f"{p}.f", M, M, rng)
        if cfg.variant == "intra-attn":
            r_dim = 2 * M if cfg.tree_mode == "latent" else M
            self.w_r = Linear(store, f"{p}.w_r", r_dim + D, K, rng, bias=False)
        if cfg.variant == "structured-attn-baseline":
            self.w_r = Linear(store, f"{p}.w_r", 3 * D, K, rng, bias=False)
        if cfg.variant == "recurrent-rn":
            msg = 2 * M if cfg.tree_mode == "latent" else M
            self.cell = LSTMCell(store, f"{p}.cell", D + msg, D, rng)

    # objects and trees

    def objects(self, embedded, mask, rng=None):
        """BiLSTM outputs with dropout on its input and output when ``rng`` is given."""
        rate = self.config.dropout
        x = T.dropout(embedded, rate, rng)
        out = self.bilstm(x, mask)
        return T.dropout(out, rate, rng)

    def extend(self, O):
        """Prepend the root object: (B, n, D) -> (B, n + 1, D)."""
        B = O.shape[0]
        root = T.broadcast_to(T.reshape(self.root, (1, 1, -1)), (B, 1, O.shape[-1]))
        return T.concat([root, O], axis=1)

    def arc_scores(self, O_ext):
        """Clamped bilinear arc scores ``o_h W o_m + U.o_h + V.o_m + b`` as (B, n + 1, n)."""
        O = O_ext[:, 1:, :]
        B, n1, D = O_ext.shape
        n = n1 - 1
        bil = T.matmul(T.matmul(O_ext, self.pot_w), T.swapaxes(O, 1, 2))
        head_term = T.reshape(T.matmul(O_ext, T.reshape(self.pot_u, (D, 1))), (B, n1, 1))
        mod_term = T.reshape(T.matmul(O, T.reshape(self.pot_v, (D, 1))), (B, 1, n))
        raw = bil + head_term + mod_term + self.pot_b
        return T.clip(raw, -POTENTIAL_CLAMP, POTENTIAL_CLAMP)

    def edge_potentials(self, O_ext, mask):
        scores = self.arc_scores(O_ext)
        return trees.potentials_from_scores(scores, lengths_of(mask)), scores

    def marginals(self, O_ext, mask):
        psi, scores = self.edge_potentials(O_ext, mask)
        return trees.tree_marginals(psi, self.config.root_mode, lengths_of(mask)), scores

    # relation-network variants

    def rn_flat(self, O, mask):
        mask = np.asarray(mask, dtype=bool)
        n = O.shape[1]
        G = self.g.grid(O, O)
        valid = mask[:, :, None] & mask[:, None, :] & ~np.eye(n, dtype=bool)[None]
        agg = _aggregate(_flatten_pairs(G), valid.reshape(len(mask), -1, 1), self.config.aggregation, axis=1)
        return self.f(agg)

    def rn_supervised(self, O_ext, heads, mask):
        mask = np.asarray(mask, dtype=bool)
        O = O_ext[:, 1:, :]
        G = self.g.pairs(gather_rows(O_ext, _safe_heads(heads)), O)
        return self.f(_aggregate(G, mask[:, :, None], self.config.aggregation, axis=1))

    def rn_latent(self, O_ext, marginals, mask):
        O = O_ext[:, 1:, :]
        P = T.as_tensor(marginals)
        weighted = T.mul(self.g.grid(O_ext, O), T.reshape(P, P.shape + (1,)))
        valid = _latent_valid(P, mask)
        B = O.shape[0]
        agg = _aggregate(_flatten_pairs(weighted), valid.reshape(B, -1, 1), self.config.aggregation, axis=1)
        return self.f(agg)

    def _contextualise(self, r, O):
        return T.tanh(self.w_r(T.concat([r, O], axis=-1)))

    def intra_supervised(self, O_ext, heads, mask):
        """Word-in-context vectors from each word's relation with its parent."""
        O = O_ext[:, 1:, :]
        r = self.f(self.g.pairs(gather_rows(O_ext, _safe_heads(heads)), O))
        return self._contextualise(r, O), {"parent": r}

    def intra_latent(self, O_ext, marginals, mask):
        O = O_ext[:, 1:, :]
        P = T.as_tensor(marginals)
        W = T.reshape(P, P.shape + (1,))
        G = self.g.grid(O_ext, O)  # G[h, m] = g(o_h, o_m)
        parent = self.f(T.reduce_sum(T.mul(G, W), axis=1))
        child = self.f(T.reduce_sum(T.mul(G[:, 1:], W[:, 1:]), axis=2))
        r = T.concat([parent, child], axis=-1)
        return self._contextualise(r, O), {"parent": parent, "child": child}

    def intra_flat(self, O, mask):
        """No tree: each word relates to every other word as a candidate parent."""
        mask = np.asarray(mask, dtype=bool)
        n = O.shape[1]
        G = self.g.grid(O, O)
        valid = mask[:, :, None] & mask[:, None, :] & ~np.eye(n, dtype=bool)[None]
        r = self.f(_aggregate(G, valid[..., None], self.config.aggregation, axis=1))
        return self._contextualise(r, O), {"parent": r}

    def parent_messages_supervised(self, H_ext, heads):
        H = H_ext[:, 1:, :]
        return self.g.pairs(gather_rows(H_ext, _safe_heads(heads)), H)

    def messages_latent(self, H_ext, marginals):
        H = H_ext[:, 1:, :]
        P = T.as_tensor(marginals)
        W = T.reshape(P, P.shape + (1,))
        G = self.g.grid(H_ext, H)
        parent = T.reduce_sum(T.mul(G, W), axis=1)
        child = T.reduce_sum(T.mul(G[:, 1:], W[:, 1:]), axis=2)
        return parent, child

    def recurrent(self, O_ext, mask, heads=None, marginals=None, steps=None):
        """Synchronous message passing for ``steps`` rounds; returns the final states h^T."""
        steps = self.config.steps if steps is None else steps
        mask = np.asarray(mask, dtype=bool)
        O = O_ext[:, 1:, :]
        H = O
        C = T.Tensor(np.zeros(O.shape))
        keep = mask[:, :, None]
        for _ in range(2, steps + 1):
            H_ext = self.extend(H)
            if marginals is None:
                inputs = T.concat([O, self.parent_messages_supervised(H_ext, heads)], axis=-1)
            else:
                mp, mc = self.messages_latent(H_ext, marginals)
                inputs = T.concat([O, mp, mc], axis=-1)
            H, C = self.cell(inputs, H, C)
            H = T.mul(H, keep)
            C = T.mul(C, keep)
        return H

    def structured_attention(self, O_ext, marginals, mask):
        """Expected parent and child objects under the marginals, no pair relations."""
        O = O_ext[:, 1:, :]
        P = T.as_tensor(marginals)
        parent = T.matmul(T.swapaxes(P, 1, 2), O_ext)
        child = T.matmul(P[:, 1:, :], O)
        r = T.concat([parent, child], axis=-1)
        return self._contextualise(r, O), {"parent": parent, "child": child}

    # full forward

    def __call__(self, embedded, mask, heads=None, rng=None) -> EncoderOutput:
        cfg = self.config
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[1] == 0 or not mask.any(axis=1).all():
            raise ValueError("every sentence needs at least one token")
        if cfg.variant == "bow":
            return EncoderOutput(bow_encode(T.dropout(embedded, cfg.dropout, rng), mask))
        O = self.objects(embedded, mask, rng)
        if cfg.variant == "bilstm-max":
            return EncoderOutput(pool(O, mask), words=O)

        P = scores = O_ext = None
        if cfg.tree_mode != "none":
            O_ext = self.extend(O)
        if cfg.tree_mode == "latent":
            P, scores = self.marginals(O_ext, mask)
        elif cfg.tree_mode == "supervised":
            if heads is None:
                raise ValueError("supervised tree mode needs head arrays")
            heads = np.asarray(heads)
            for b, L in enumerate(lengths_of(mask)):
                trees.check_tree(heads[b, :L])

        extras = {}
        words = None
        if cfg.variant == "flat-rn":
            if cfg.tree_mode == "none":
                s = self.rn_flat(O, mask)
            elif cfg.tree_mode == "supervised":
                s = self.rn_supervised(O_ext, heads, mask)
            else:
                s = self.rn_latent(O_ext, P, mask)
            return EncoderOutput(s, marginals=P, scores=scores)
        if cfg.variant == "intra-attn":
            if cfg.tree_mode == "none":
                words, extras = self.intra_flat(O, mask)
            elif cfg.tree_mode == "supervised":
                words, extras = self.intra_supervised(O_ext, heads, mask)
            else:
                words, extras = self.intra_latent(O_ext, P, mask)
        elif cfg.variant == "recurrent-rn":
            if cfg.tree_mode == "supervised":
                words = self.recurrent(O_ext, mask, heads=heads)
            else:
                words = self.recurrent(O_ext, mask, marginals=P)
        elif cfg.variant == "structured-attn-baseline":
            if P is None:
                P = T.Tensor(_onehot_batch(heads, mask))
            words, extras = self.structured_attention(O_ext, P, mask)
        return EncoderOutput(pool(words, mask), words=words, marginals=P, scores=scores, extras=extras)


def _onehot_batch(heads, mask):
    heads = np.asarray(heads, dtype=np.int64)
    B, n = heads.shape
    out = np.zeros((B, n + 1, n))
    for b in range(B):
        L = int(np.asarray(mask[b]).sum())
        out[b, : L + 1, :L] = trees.marginals_from_tree(heads[b, :L])
    return out
