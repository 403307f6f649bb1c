"""Parameter registry and the RNSX1 binary checkpoint format.

Checkpoint layout (all integers unsigned 64-bit little-endian)::

    b"RNSX1"
    repeated until EOF:
        name length, name bytes (utf-8), rank, extents[rank],
        data as float64 little-endian, row-major
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from rnsent.errors import DataFormatError
from rnsent.tensor import Parameter

MAGIC = b"RNSX1"


class ParameterStore:
    """Ordered name -> Parameter mapping with dotted-path names."""

    def __init__(self):
        self._params: OrderedDict[str, Parameter] = OrderedDict()

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(np.array(value, dtype=np.float64), name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True):
        if strict and set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            if k not in self._params:
                continue
            p = self._params[k]
            if p.data.shape != np.shape(v):
                raise ValueError(f"{k}: shape {np.shape(v)} does not match {p.data.shape}")
            p.data[...] = v


def save_checkpoint(path, arrays) -> None:
    """Write ``{name: array}`` (or a ParameterStore) to an RNSX1 file."""
    if isinstance(arrays, ParameterStore):
        arrays = arrays.state()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in arrays.items():
            data = np.asarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise DataFormatError("not an RNSX1 checkpoint (bad magic)", path=path)
    pos = len(MAGIC)
    out: OrderedDict[str, np.ndarray] = OrderedDict()

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataFormatError("truncated checkpoint", path=path)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        out[name] = data.reshape(shape)
    return out
