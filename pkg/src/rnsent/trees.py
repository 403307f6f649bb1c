"""Edge-factored distributions over non-projective dependency trees.

Index conventions
-----------------
Potential, score and marginal matrices have shape ``(..., n + 1, n)``: row
``h`` is the head (0 is the artificial root), column ``m - 1`` is the
modifier ``m``.  Self-arcs ``h == m`` are not part of the index set and must
be zero (potentials) or are ignored (scores).  Head arrays are length ``n``
with ``heads[m - 1]`` the head of word ``m``.

Two root settings are supported: ``"multi"`` lets the root take any number
of children, ``"single"`` requires exactly one.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from rnsent import tensor as T
from rnsent.errors import DegenerateDistributionError, InvalidTreeError, SingularMatrixError

ROOT_MODES = ("multi", "single")
MAX_ENUM_LENGTH = 8


def _check_mode(mode):
    if mode not in ROOT_MODES:
        raise ValueError(f"root mode must be one of {ROOT_MODES}, got {mode!r}")


def arc_mask(n: int, lengths=None) -> np.ndarray:
    """Boolean ``(n + 1, n)`` (or batched) mask of arcs that exist in D(x) minus self-arcs."""
    h = np.arange(n + 1)[:, None]
    m = np.arange(1, n + 1)[None, :]
    mask = h != m
    if lengths is None:
        return mask
    lengths = np.asarray(lengths)
    real = np.arange(n + 1)[None, :] <= lengths[:, None]
    return mask[None] & real[:, :, None] & real[:, None, 1:]


def _square(x):
    """Square ``(..., n+1, n)`` potentials into the word-word block and root row."""
    return x[..., 1:, :], x[..., 0, :]


def build_laplacian(psi, mode: str = "multi", lengths=None) -> T.Tensor:
    """Matrix whose determinant is the partition function over trees.

    ``psi`` holds strictly positive potentials with zeros at self-arcs (and
    at padding when ``lengths`` is given; padded rows/columns become
    identity so the determinant and inverse of the real block are unchanged).
    """
    _check_mode(mode)
    psi = T.as_tensor(psi)
    n = psi.shape[-1]
    if n == 0:
        raise ValueError("cannot build a Laplacian for an empty sentence")
    if psi.shape[-2] != n + 1:
        raise ValueError(f"potentials must have shape (..., n+1, n), got {psi.shape}")
    eye = np.eye(n)
    words, root = _square(psi)
    words = T.mul(words, 1.0 - eye)
    indegree = T.reduce_sum(words, axis=-2)  # (..., n)
    if mode == "multi":
        diag = T.add(indegree, root)
        lap = T.sub(T.mul(T.reshape(diag, diag.shape[:-1] + (1, n)), eye), words)
    else:
        base = T.sub(T.mul(T.reshape(indegree, indegree.shape[:-1] + (1, n)), eye), words)
        first_row = np.zeros((n, 1), dtype=bool)
        first_row[0] = True
        lap = T.where(first_row, T.reshape(root, root.shape[:-1] + (1, n)), base)
    if lengths is not None:
        pad = np.arange(n)[None, :] >= np.asarray(lengths)[:, None]  # (B, n)
        lap = T.add(lap, pad[:, :, None] * eye)
    return lap


def _factor_error(exc):
    return DegenerateDistributionError(f"tree distribution is degenerate: {exc}")


def log_partition(psi, mode: str = "multi", lengths=None) -> T.Tensor:
    """log of the sum over trees of the product of their arc potentials."""
    lap = build_laplacian(psi, mode, lengths)
    try:
        return T.logdet(lap)
    except SingularMatrixError as exc:
        raise _factor_error(exc) from exc


def tree_marginals(psi, mode: str = "multi", lengths=None) -> T.Tensor:
    """Arc marginals p(h -> m) as an ``(..., n + 1, n)`` tensor.

    Built from the inverse Laplacian with tensor ops only, so gradients flow
    back to the potentials through the recorded inverse.
    """
    psi = T.as_tensor(psi)
    n = psi.shape[-1]
    lap = build_laplacian(psi, mode, lengths)
    try:
        inv = T.matrix_inverse(lap)
    except SingularMatrixError as exc:
        raise _factor_error(exc) from exc
    eye = np.eye(n)
    words, root = _square(psi)
    words = T.mul(words, 1.0 - eye)
    idx = np.arange(n)
    inv_diag = inv[..., idx, idx]  # (..., n): inv[m, m]
    inv_t = T.swapaxes(inv, -1, -2)  # inv_t[h, m] = inv[m, h]
    diag_row = T.reshape(inv_diag, inv_diag.shape[:-1] + (1, n))
    if mode == "multi":
        root_marg = T.mul(root, inv_diag)
        word_marg = T.mul(words, T.sub(diag_row, inv_t))
    else:
        not_first_m = np.ones((1, n))
        not_first_m[0, 0] = 0.0
        not_first_h = np.ones((n, 1))
        not_first_h[0, 0] = 0.0
        root_marg = T.mul(root, inv[..., :, 0])
        word_marg = T.sub(
            T.mul(T.mul(words, diag_row), not_first_m),
            T.mul(T.mul(words, inv_t), not_first_h),
        )
    root_marg = T.reshape(root_marg, root_marg.shape[:-1] + (1, n))
    return T.concat([root_marg, word_marg], axis=-2)


def potentials_from_scores(scores, lengths=None) -> T.Tensor:
    """exp(scores) with self-arcs (and padding) zeroed."""
    scores = T.as_tensor(scores)
    n = scores.shape[-1]
    mask = arc_mask(n, lengths)
    return T.where(mask, T.exp(T.where(mask, scores, 0.0)), 0.0)


# discrete trees


def is_valid_tree(heads, mode: str = "multi") -> bool:
    """True iff ``heads`` is an arborescence rooted at 0 (single child of 0 in single mode)."""
    _check_mode(mode)
    try:
        heads = [int(h) for h in heads]
    except (TypeError, ValueError):
        return False
    n = len(heads)
    if n == 0:
        return False
    for m, h in enumerate(heads, start=1):
        if h < 0 or h > n or h == m:
            return False
    if mode == "single" and sum(1 for h in heads if h == 0) != 1:
        return False
    state = [0] * (n + 1)  # 0 unseen, 1 on stack, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            return False
        for v in path:
            state[v] = 2
    return True


def check_tree(heads, mode: str = "multi"):
    if not is_valid_tree(heads, mode):
        raise InvalidTreeError(f"not a valid dependency tree ({mode}-root): {list(heads)}")
    return np.asarray(heads, dtype=np.int64)


def marginals_from_tree(heads, mode: str = "multi") -> np.ndarray:
    """One-hot ``(n + 1, n)`` marginal matrix of a single tree."""
    heads = check_tree(heads, mode)
    n = len(heads)
    p = np.zeros((n + 1, n))
    p[heads, np.arange(n)] = 1.0
    return p


@lru_cache(maxsize=None)
def _enumerate(n: int, mode: str) -> np.ndarray:
    choices = [[h for h in range(n + 1) if h != m] for m in range(1, n + 1)]
    cand = np.array(list(itertools.product(*choices)), dtype=np.int64).reshape(-1, n)
    # every node must reach the root within n pointer hops
    node = np.tile(np.arange(1, n + 1), (cand.shape[0], 1))
    ext = np.concatenate([np.zeros((cand.shape[0], 1), dtype=np.int64), cand], axis=1)
    for _ in range(n):
        node = np.take_along_axis(ext, node, axis=1)
    ok = (node == 0).all(axis=1)
    if mode == "single":
        ok &= (cand == 0).sum(axis=1) == 1
    trees = cand[ok]
    trees.setflags(write=False)
    return trees


def enumerate_trees(n: int, mode: str = "multi") -> np.ndarray:
    """All valid head arrays for length ``n`` as a ``(count, n)`` integer array."""
    _check_mode(mode)
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > MAX_ENUM_LENGTH:
        raise ValueError(f"refusing to enumerate trees for n={n} > {MAX_ENUM_LENGTH}")
    return _enumerate(n, mode)


def tree_scores(scores: np.ndarray, trees: np.ndarray) -> np.ndarray:
    """Sum of arc scores for each head array (rows of ``trees``)."""
    scores = np.asarray(scores, dtype=np.float64)
    trees = np.atleast_2d(trees)
    n = trees.shape[1]
    vals = scores[trees, np.arange(n)[None, :]]
    total = np.zeros(trees.shape[0])
    for m in range(n):
        total = total + vals[:, m]
    return total


def brute_force_marginals(psi: np.ndarray, mode: str = "multi"):
    """(log Z, marginals) by explicit enumeration; the oracle for small n."""
    psi = np.asarray(psi, dtype=np.float64)
    n = psi.shape[-1]
    trees = enumerate_trees(n, mode)
    with np.errstate(divide="ignore"):
        logw = tree_scores(np.log(psi), trees)
    top = logw.max()
    w = np.exp(logw - top)
    z = w.sum()
    marg = np.zeros_like(psi)
    for m in range(n):
        np.add.at(marg[:, m], trees[:, m], w)
    return top + np.log(z), marg / z


# Chu-Liu-Edmonds


def _cle(scores: np.ndarray) -> np.ndarray:
    """Maximum arborescence over nodes 0..N-1 rooted at 0; ``scores[h, d]``, -inf = no arc."""
    size = scores.shape[0]
    s = scores.copy()
    np.fill_diagonal(s, -np.inf)
    s[:, 0] = -np.inf
    heads = np.argmax(s, axis=0)
    heads[0] = -1

    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(size, dtype=bool)
    in_cycle[cycle] = True
    rest = np.flatnonzero(~in_cycle)  # includes the root
    c = len(rest)  # index of the contracted node
    cycle_score = s[heads[cycle], cycle]

    sub = np.full((c + 1, c + 1), -np.inf)
    sub[:c, :c] = s[np.ix_(rest, rest)]
    # arcs entering the cycle: best gain over breaking at each cycle node
    enter = s[np.ix_(rest, cycle)] - cycle_score[None, :]
    enter_arg = np.argmax(enter, axis=1)
    sub[:c, c] = enter[np.arange(c), enter_arg]
    # arcs leaving the cycle
    leave = s[np.ix_(cycle, rest)]
    leave_arg = np.argmax(leave, axis=0)
    sub[c, :c] = leave[leave_arg, np.arange(c)]

    sub_heads = _cle(sub)

    out = heads.copy()
    for j in range(1, c):
        h = sub_heads[j]
        out[rest[j]] = cycle[leave_arg[j]] if h == c else rest[h]
    src = sub_heads[c]
    broken = cycle[enter_arg[src]]
    out[broken] = rest[src]
    return out


def _find_cycle(heads):
    size = len(heads)
    color = np.zeros(size, dtype=np.int8)
    color[0] = 2
    for start in range(1, size):
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = heads[node]
        if color[node] == 1:
            return np.array(path[path.index(node) :], dtype=np.int64)
        for v in path:
            color[v] = 2
    return None


def _square_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    full = np.full((n + 1, n + 1), -np.inf)
    full[:, 1:] = scores
    full[np.arange(1, n + 1), np.arange(1, n + 1)] = -np.inf
    return full


def cle_decode(scores, mode: str = "multi") -> np.ndarray:
    """Highest-scoring tree for an ``(n + 1, n)`` matrix of arc scores."""
    _check_mode(mode)
    full = _square_scores(scores)
    n = full.shape[0] - 1
    if not np.isfinite(np.asarray(scores)[arc_mask(n)]).all():
        raise ValueError("arc scores must be finite")
    heads = _cle(full)[1:]
    if mode == "multi" or (heads == 0).sum() == 1:
        return heads
    best, best_score = None, -np.inf
    for r in range(1, n + 1):
        forced = full.copy()
        forced[0, :] = -np.inf
        forced[0, r] = full[0, r]
        cand = _cle(forced)[1:]
        sc = tree_scores(scores, cand[None])[0]
        if sc > best_score:
            best, best_score = cand, sc
    return best
