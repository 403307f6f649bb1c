"""Corpus readers, vocabulary, pretrained embeddings and padded batches."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from rnsent import trees
from rnsent.errors import DataFormatError

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
HEAD_PAD = -1


class Vocabulary:
    """Token <-> index map; index 0 is padding and 1 is the unknown token."""

    def __init__(self, tokens: Iterable[str] = (), counts: Counter | None = None, lowercase: bool = False):
        self.lowercase = lowercase
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        self.counts = Counter(counts or {})
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_freq: int = 1, lowercase: bool = False):
        counts = Counter()
        for sent in sentences:
            counts.update(t.lower() if lowercase else t for t in sent)
        # frequency-descending, ties by first appearance order of Counter (insertion)
        keep = [tok for tok, c in sorted(counts.items(), key=lambda kv: -kv[1]) if c >= min_freq]
        return cls(keep, counts, lowercase)

    def _norm(self, tok):
        return tok.lower() if self.lowercase else tok

    def add(self, tok: str) -> int:
        tok = self._norm(tok)
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return self._norm(tok) in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(self._norm(t), UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_dict(self) -> dict:
        return {"itos": self.itos, "lowercase": self.lowercase}

    @classmethod
    def from_dict(cls, d):
        vocab = cls(lowercase=d.get("lowercase", False))
        for tok in d["itos"][2:]:
            vocab.itos.append(tok)
            vocab.stoi[tok] = len(vocab.itos) - 1
        return vocab


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    pretrained: np.ndarray
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def load_pretrained_embeddings(path, vocab: Vocabulary, dim: int | None = None, rng=None, scale=0.05):
    """Rows for tokens found in ``path``; every other row is uniform in [-scale, scale].

    The file holds one ``token v1 ... vd`` line per token.  The first
    occurrence of a repeated token wins.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    found: dict[int, np.ndarray] = {}
    file_dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            tok, vals = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(vals)
                if dim is not None and dim != file_dim:
                    raise DataFormatError(f"vectors have dimension {file_dim}, expected {dim}", path, lineno)
            elif len(vals) != file_dim:
                raise DataFormatError(f"expected {file_dim} values, got {len(vals)}", path, lineno)
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError:
                raise DataFormatError("non-numeric vector entry", path, lineno) from None
            if not np.isfinite(vec).all():
                raise DataFormatError("non-finite vector entry", path, lineno)
            if tok not in vocab:
                continue
            idx = vocab.stoi[vocab._norm(tok)]
            if idx in found:
                duplicates += 1
                log.warning("%s:%d: duplicate token %r ignored (first occurrence kept)", path, lineno, tok)
                continue
            found[idx] = vec
    if file_dim is None:
        if dim is None:
            raise DataFormatError("empty embedding file and no dimension given", path)
        log.warning("%s: embedding file is empty; all rows randomly initialised", path)
        file_dim = dim
    table = rng.uniform(-scale, scale, size=(len(vocab), file_dim))
    pretrained = np.zeros(len(vocab), dtype=bool)
    for idx, vec in found.items():
        table[idx] = vec
        pretrained[idx] = True
    log.info("embeddings: %d pretrained rows, %d random rows", pretrained.sum(), (~pretrained).sum())
    return EmbeddingTable(table, pretrained)


@dataclass
class Example:
    id: str
    tokens: list[str]
    label: str
    tokens2: list[str] | None = None
    heads: np.ndarray | None = None
    heads2: np.ndarray | None = None

    def __post_init__(self):
        if not self.tokens or (self.tokens2 is not None and not self.tokens2):
            raise ValueError(f"example {self.id}: empty sentence")
        for toks, h in ((self.tokens, self.heads), (self.tokens2, self.heads2)):
            if h is not None and len(h) != len(toks):
                raise ValueError(f"example {self.id}: {len(h)} heads for {len(toks)} tokens")

    @property
    def is_pair(self) -> bool:
        return self.tokens2 is not None


def _check_label(label, labels, path, lineno):
    if labels is not None and label not in labels:
        raise DataFormatError(f"unknown label {label!r}", path, lineno)


def read_single_sentence_tsv(path, labels=None) -> list[Example]:
    """``label<TAB>space-tokenised sentence`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n ")
            if not line.strip():
                continue
            fields = line.split("\t", 1)
            if len(fields) != 2:
                raise DataFormatError("expected label<TAB>sentence", path, lineno)
            label, text = fields[0].strip(), fields[1]
            _check_label(label, labels, path, lineno)
            tokens = text.split()
            if not tokens:
                raise DataFormatError("empty sentence", path, lineno)
            out.append(Example(str(len(out) + 1), tokens, label))
    return out


def read_pair_tsv(path, labels=None) -> list[Example]:
    """``label<TAB>sentence1<TAB>sentence2`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n ")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataFormatError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
            label = fields[0].strip()
            _check_label(label, labels, path, lineno)
            t1, t2 = fields[1].split(), fields[2].split()
            if not t1 or not t2:
                raise DataFormatError("empty sentence", path, lineno)
            out.append(Example(str(len(out) + 1), t1, label, tokens2=t2))
    return out


def read_conllu_heads(path) -> dict[str, np.ndarray]:
    """Head arrays from a 10-column dependency file, keyed by sentence id.

    Multi-word token ranges (``1-2``) and empty nodes (``1.1``) are skipped.
    Sentences without a ``# sent_id`` comment are keyed by their ordinal.
    """
    out: dict[str, np.ndarray] = {}
    block: list[tuple[int, int]] = []  # (line number, head)
    sent_id = None

    def finish():
        nonlocal block, sent_id
        if block:
            n = len(block)
            for lineno, h in block:
                if h > n:
                    raise DataFormatError(f"head {h} out of range for {n} tokens", path, lineno)
            heads = [h for _, h in block]
            key = sent_id if sent_id is not None else str(len(out) + 1)
            if not trees.is_valid_tree(heads):
                raise DataFormatError(f"sentence {key}: heads {heads} do not form a tree", path, block[0][0])
            out[key] = np.array(heads, dtype=np.int64)
        block, sent_id = [], None

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                finish()
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "sent_id":
                    sent_id = value.strip()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise DataFormatError(f"expected 10 columns, got {len(cols)}", path, lineno)
            if "-" in cols[0] or "." in cols[0]:
                continue
            try:
                h = int(cols[6])
            except ValueError:
                raise DataFormatError(f"non-integer head {cols[6]!r}", path, lineno) from None
            if h < 0:
                raise DataFormatError(f"head {h} out of range", path, lineno)
            block.append((lineno, h))
    finish()
    return out


def write_conllu(fh, tokens, heads, sent_id=None):
    if sent_id is not None:
        fh.write(f"# sent_id = {sent_id}\n")
    fh.write(f"# text = {' '.join(tokens)}\n")
    for i, (tok, h) in enumerate(zip(tokens, heads), start=1):
        rel = "root" if h == 0 else "dep"
        fh.write(f"{i}\t{tok}\t_\t_\t_\t_\t{int(h)}\t{rel}\t_\t_\n")
    fh.write("\n")


def attach_heads(examples: list[Example], heads: dict[str, np.ndarray], second: bool = False):
    """Pair head arrays with examples positionally (file order)."""
    arrays = list(heads.values())
    if len(arrays) != len(examples):
        raise DataFormatError(f"{len(arrays)} parsed sentences for {len(examples)} examples")
    for ex, h in zip(examples, arrays):
        toks = ex.tokens2 if second else ex.tokens
        if len(h) != len(toks):
            raise DataFormatError(f"example {ex.id}: {len(h)} heads for {len(toks)} tokens")
        if second:
            ex.heads2 = h
        else:
            ex.heads = h
    return examples


def split_validation(train: Sequence, k: int, seed: int, allow_empty: bool = False):
    """Deterministic uniform split into (rest, dev) with ``len(dev) == k``."""
    n = len(train)
    if k >= n:
        raise ValueError(f"cannot hold out {k} of {n} examples")
    if k < 0 or (k == 0 and not allow_empty):
        raise ValueError("dev size must be positive (pass allow_empty=True for an empty dev set)")
    perm = np.random.default_rng(seed).permutation(n)
    dev_idx = set(perm[:k].tolist())
    rest = [x for i, x in enumerate(train) if i not in dev_idx]
    dev = [train[i] for i in sorted(dev_idx)]
    return rest, dev


@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    example_ids: list = field(default_factory=list)
    heads: np.ndarray | None = None
    ids2: np.ndarray | None = None
    mask2: np.ndarray | None = None
    lengths2: np.ndarray | None = None
    heads2: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)


def _pad(seqs, fill, dtype=np.int64):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), fill, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    lengths = np.array([len(s) for s in seqs])
    mask = np.arange(width)[None, :] < lengths[:, None]
    return out, mask, lengths


def make_batch(examples: Sequence[Example], vocab: Vocabulary, labels=None) -> Batch:
    ids, mask, lengths = _pad([vocab.encode(e.tokens) for e in examples], PAD_ID)
    if labels is not None:
        gold = np.array([labels.index(e.label) for e in examples], dtype=np.int64)
    else:
        gold = np.full(len(examples), -1, dtype=np.int64)
    batch = Batch(ids, mask, lengths, gold, [e.id for e in examples])
    if all(e.heads is not None for e in examples):
        batch.heads, _, _ = _pad([e.heads for e in examples], HEAD_PAD)
    if all(e.is_pair for e in examples):
        batch.ids2, batch.mask2, batch.lengths2 = _pad([vocab.encode(e.tokens2) for e in examples], PAD_ID)
        if all(e.heads2 is not None for e in examples):
            batch.heads2, _, _ = _pad([e.heads2 for e in examples], HEAD_PAD)
    return batch


def make_batches(examples: Sequence[Example], batch_size: int, vocab: Vocabulary, labels=None, rng=None):
    """Padded batches in file order, or shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    return [
        make_batch([examples[i] for i in order[s : s + batch_size]], vocab, labels)
        for s in range(0, len(order), batch_size)
    ]
