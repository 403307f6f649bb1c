"""Dump CLE trees and arc marginals induced by a latent-tree model."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from rnsent.data import make_batch, write_conllu, Example


def write_marginals(fh, tokens, marginals, sent_id=None):
    """One block per sentence: header of modifier indices, then one row per head from 0."""
    n = len(tokens)
    marginals = np.asarray(marginals)
    if marginals.shape != (n + 1, n):
        raise ValueError(f"marginal matrix {marginals.shape} does not fit {n} tokens")
    if sent_id is not None:
        fh.write(f"# sent_id = {sent_id}\n")
    fh.write("head\\mod\t" + "\t".join(str(m) for m in range(1, n + 1)) + "\n")
    for h in range(n + 1):
        fh.write(f"{h}\t" + "\t".join(f"{x:.6g}" for x in marginals[h]) + "\n")
    fh.write("\n")


def decode(model, sentences: Sequence[Sequence[str]], vocab, batch_size: int = 64):
    """(heads, marginals) per sentence, in input order."""
    out = []
    for s in range(0, len(sentences), batch_size):
        chunk = [Example(str(i), list(t), "") for i, t in enumerate(sentences[s : s + batch_size])]
        batch = make_batch(chunk, vocab)
        out.extend((h, p) for h, p, _ in model.decode_trees(batch.ids, batch.mask))
    return out


def dump_trees(model, sentences, vocab, tree_path, marginals_path=None, ids=None):
    """Write CLE trees as CoNLL-U and, optionally, the marginal matrices as TSV blocks."""
    results = decode(model, sentences, vocab)
    ids = [str(i + 1) for i in range(len(sentences))] if ids is None else list(ids)
    with open(tree_path, "w", encoding="utf-8") as fh:
        for sid, toks, (heads, _) in zip(ids, sentences, results):
            write_conllu(fh, list(toks), heads, sent_id=sid)
    if marginals_path is not None:
        with open(marginals_path, "w", encoding="utf-8") as fh:
            for sid, toks, (_, P) in zip(ids, sentences, results):
                write_marginals(fh, toks, P, sent_id=sid)
    return [h for h, _ in results]
