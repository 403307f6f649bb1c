"""Keyword-identity corpus for checking whether latent trees root the keyword.

Each sentence is filler words plus exactly one keyword at a random position;
the label is a function of which keyword appears.  Nothing else in the
sentence carries label information, so a model that classifies well has
to find the keyword, and the tree dump shows whether it also roots it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rnsent.data import Example


@dataclass(frozen=True)
class KeywordTask:
    n_labels: int = 4
    keywords_per_label: int = 2
    n_filler: int = 30
    min_len: int = 4
    max_len: int = 8

    def __post_init__(self):
        if self.n_labels < 2:
            raise ValueError("need at least two labels")
        if self.keywords_per_label < 1 or self.n_filler < 1:
            raise ValueError("need at least one keyword per label and one filler word")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")

    @property
    def labels(self) -> list[str]:
        return [f"C{k}" for k in range(self.n_labels)]

    def keyword(self, label: int, j: int) -> str:
        return f"key{label}_{j}"

    @property
    def keywords(self) -> dict[str, str]:
        """Keyword -> label."""
        return {
            self.keyword(k, j): f"C{k}" for k in range(self.n_labels) for j in range(self.keywords_per_label)
        }

    def generate(self, size: int, rng: np.random.Generator, prefix: str = "s") -> list[Example]:
        out = []
        for i in range(size):
            n = int(rng.integers(self.min_len, self.max_len + 1))
            label = int(rng.integers(self.n_labels))
            tokens = [f"w{int(x)}" for x in rng.integers(self.n_filler, size=n)]
            pos = int(rng.integers(n))
            tokens[pos] = self.keyword(label, int(rng.integers(self.keywords_per_label)))
            out.append(Example(f"{prefix}{i + 1}", tokens, f"C{label}"))
        return out

    def keyword_position(self, tokens) -> int:
        keys = self.keywords
        hits = [i for i, t in enumerate(tokens) if t in keys]
        if len(hits) != 1:
            raise ValueError(f"expected exactly one keyword in {tokens}")
        return hits[0]


def root_rate(task: KeywordTask, sentences, heads) -> float:
    """Fraction of sentences whose keyword attaches to the artificial root."""
    if not sentences:
        raise ValueError("no sentences")
    hits = sum(int(h[task.keyword_position(toks)] == 0) for toks, h in zip(sentences, heads))
    return hits / len(sentences)
