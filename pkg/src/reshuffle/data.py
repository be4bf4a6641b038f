"""LIBSVM ingestion, minibatch grouping and experiment-protocol constants."""
from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np
import scipy.sparse as sp


class LibsvmFormatError(ValueError):
    """Malformed LIBSVM input; carries the line number and the idx:val pair position."""

    def __init__(self, message: str, line: int, column: int, source: str = "<stream>"):
        self.line, self.column, self.source = line, column, source
        super().__init__(f"{source}:{line}: column {column}: {message}")


@dataclass(frozen=True)
class Dataset:
    features: sp.csr_matrix
    labels: np.ndarray

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class MinibatchPartition:
    groups: tuple
    tau: int

    @property
    def n(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]


_LABELS = {-1.0: 0.0, 0.0: 0.0, 1.0: 1.0}


def parse_libsvm(stream: Union[TextIO, Iterable[str]], d: Optional[int] = None, source: str = "<stream>") -> Dataset:
    """Read ``<label> <idx>:<val> ...`` lines with 1-based increasing indices.

    Labels ``-1``/``+1`` map to ``0``/``1``; ``0`` and ``1`` are kept and
    anything else is rejected. ``d`` overrides the dimension inferred from the
    largest index. Columns in error messages count ``idx:val`` pairs from 1;
    the label is column 0.
    """
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_index = 0
    for lineno, line in enumerate(stream, start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            raw = float(tokens[0])
        except ValueError:
            raise LibsvmFormatError(f"unparseable label {tokens[0]!r}", lineno, 0, source) from None
        if raw not in _LABELS:
            raise LibsvmFormatError(f"label {tokens[0]!r} is not one of -1, 0, 1", lineno, 0, source)
        prev = 0
        for col, tok in enumerate(tokens[1:], start=1):
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmFormatError(f"expected idx:val, got {tok!r}", lineno, col, source)
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmFormatError(f"bad index {idx_s!r}", lineno, col, source) from None
            try:
                val = float(val_s)
            except ValueError:
                raise LibsvmFormatError(f"unparseable real {val_s!r}", lineno, col, source) from None
            if idx < 1:
                raise LibsvmFormatError(f"index {idx} is not 1-based", lineno, col, source)
            if idx <= prev:
                raise LibsvmFormatError(f"non-increasing index {idx} after {prev}", lineno, col, source)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        labels.append(_LABELS[raw])
        indptr.append(len(indices))
    if not labels:
        raise LibsvmFormatError("no samples", 0, 0, source)
    if d is None:
        d = max(max_index, 1)
    elif d < max_index:
        raise ValueError(f"dimension override {d} is smaller than max index {max_index}")
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    return Dataset(X, np.array(labels))


def load_libsvm(path: Union[str, Path], d: Optional[int] = None) -> Dataset:
    """Open a LIBSVM file (``.gz``/``.bz2`` decompressed transparently) and parse it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if path.suffix == ".gz":
        fh = io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    elif path.suffix == ".bz2":
        import bz2

        fh = io.TextIOWrapper(bz2.open(path, "rb"), encoding="utf-8")
    else:
        fh = open(path, encoding="utf-8")
    with fh:
        return parse_libsvm(fh, d=d, source=str(path))


def serialize_libsvm(dataset: Dataset, binary_labels: str = "01") -> str:
    """Write a dataset back out; ``repr`` floats so values round-trip exactly."""
    X = sp.csr_matrix(dataset.features)
    out = []
    for r in range(X.shape[0]):
        lab = dataset.labels[r]
        if binary_labels == "pm":
            lab = 1.0 if lab == 1 else -1.0
        parts = [f"{int(lab)}"]
        lo, hi = X.indptr[r], X.indptr[r + 1]
        parts += [f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi])]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def group_minibatches(N: int, tau: int, ordering: Optional[Sequence[int]] = None) -> MinibatchPartition:
    """Cut ``ordering`` (default: identity) into ``ceil(N/tau)`` contiguous groups.

    All groups have size ``tau`` except the last, which takes the remainder.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if not 1 <= tau <= N:
        raise ValueError(f"tau must lie in [1, N={N}], got {tau}")
    order = np.arange(N) if ordering is None else np.asarray(ordering, dtype=np.intp)
    if order.shape != (N,) or not np.array_equal(np.sort(order), np.arange(N)):
        raise ValueError("ordering must be a permutation of range(N)")
    n = math.ceil(N / tau)
    groups = tuple(order[k * tau:(k + 1) * tau] for k in range(n))
    return MinibatchPartition(groups, tau)


def batch_smoothness(L_f: float, L_max: float, n_samples: int, tau: int) -> float:
    """Smoothness of a size-``tau`` minibatch loss, interpolating ``L_f`` and ``L_max``."""
    n = n_samples
    if n < 2:
        raise ValueError("n_samples must be at least 2")
    if not 1 <= tau <= n:
        raise ValueError(f"tau must lie in [1, {n}]")
    return n * (tau - 1) / (tau * (n - 1)) * L_f + (n - tau) / (tau * (n - 1)) * L_max


def default_regularizer(L: float, N: int) -> float:
    """``lambda = L / sqrt(N)``."""
    if not L > 0 or N < 1:
        raise ValueError("need L > 0 and N >= 1")
    return L / math.sqrt(N)


def synthetic_logistic(N: int, d: int, seed: int = 0, density: float = 1.0) -> Dataset:
    """Random classification data with labels from a planted linear model."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, d))
    if density < 1.0:
        X *= rng.random((N, d)) < density
    w = rng.standard_normal(d)
    p = 1.0 / (1.0 + np.exp(-(X @ w)))
    y = (rng.random(N) < p).astype(float)
    return Dataset(sp.csr_matrix(X), y)
