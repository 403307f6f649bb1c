import numpy as np
import pytest

from rnsent.tensor import Parameter


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def params_of(*arrays):
    return [Parameter(np.array(a, dtype=np.float64), name=f"x{i}") for i, a in enumerate(arrays)]


def padded_batch(rng, lengths, vocab=8):
    """Random ids, mask and valid multi-root heads for sentences of the given lengths."""
    from rnsent import trees

    B, n = len(lengths), max(lengths)
    ids = np.zeros((B, n), dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    heads = -np.ones((B, n), dtype=np.int64)
    for i, L in enumerate(lengths):
        ids[i, :L] = rng.integers(1, vocab, size=L)
        mask[i, :L] = True
        ts = trees.enumerate_trees(L)
        heads[i, :L] = ts[rng.integers(len(ts))]
    return ids, mask, heads


ACCEPTANCE_LINES: list[str] = []


def record(criterion, ok, detail):
    """Store and print one acceptance line; returns ``ok`` for asserting."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
