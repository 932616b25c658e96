"""Windowed hypersparse traffic matrices over anonymized addresses.

A matrix is kept in sorted coordinate form: parallel ``rows``/``cols``
(uint32) and ``counts`` (uint64) arrays ordered strictly by (row, col).
Tallying packs each coordinate into one uint64 key, ``row << 32 | col``, so
key order is exactly (row, col) order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .anonymize import AnonBatch

U64_MAX = (1 << 64) - 1
DEFAULT_WINDOW = 1 << 17

_EMPTY_U32 = np.empty(0, dtype=np.uint32)
_EMPTY_U64 = np.empty(0, dtype=np.uint64)


class MatrixError(ValueError):
    pass


class EmptyInput(MatrixError):
    pass


class CountOverflow(MatrixError):
    pass


class InvalidMatrix(MatrixError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    packets_per_window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.packets_per_window < 1:
            raise ValueError("packets_per_window must be at least 1")


def exact_total(counts: np.ndarray) -> int:
    """Sum of a uint64 array as a Python int, without wraparound."""
    if counts.size == 0:
        return 0
    if int(counts.max()) <= U64_MAX // counts.size:
        return int(counts.sum(dtype=np.uint64))
    return sum(counts.tolist())


@dataclass(frozen=True, eq=False)
class TrafficMatrix:
    """Packet counts between anonymized sources (rows) and destinations (cols).

    ``window_index`` is None for an aggregate built by :func:`sum_matrices`.
    """

    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    window_index: int | None = None

    @classmethod
    def empty(cls, window_index: int | None = None) -> TrafficMatrix:
        return cls(_EMPTY_U32, _EMPTY_U32, _EMPTY_U64, window_index)

    @classmethod
    def from_entries(cls, entries, window_index: int | None = None) -> TrafficMatrix:
        """Build from a {(row, col): count} mapping or (row, col, count) triples.

        Entries are sorted here; duplicates and zero counts are rejected.
        """
        if isinstance(entries, dict):
            entries = [(r, c, n) for (r, c), n in entries.items()]
        entries = sorted(entries)
        if not entries:
            return cls.empty(window_index)
        rows, cols, counts = zip(*entries)
        m = cls(
            np.array(rows, dtype=np.uint32),
            np.array(cols, dtype=np.uint32),
            np.array(counts, dtype=np.uint64),
            window_index,
        )
        m.validate()
        return m

    @property
    def nnz(self) -> int:
        return len(self.counts)

    @property
    def is_aggregate(self) -> bool:
        return self.window_index is None

    def mass(self) -> int:
        return exact_total(self.counts)

    def keys(self) -> np.ndarray:
        return (self.rows.astype(np.uint64) << np.uint64(32)) | self.cols.astype(np.uint64)

    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.counts.tolist()))

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {(r, c): n for r, c, n in self.entries()}

    def validate(self) -> None:
        if not (len(self.rows) == len(self.cols) == len(self.counts)):
            raise InvalidMatrix("coordinate and count arrays differ in length")
        if self.nnz == 0:
            return
        keys = self.keys()
        if np.any(keys[1:] <= keys[:-1]):
            raise InvalidMatrix("entries not strictly sorted by (row, col)")
        if np.any(self.counts == 0):
            raise InvalidMatrix("zero count stored")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrafficMatrix):
            return NotImplemented
        return (
            self.window_index == other.window_index
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self) -> str:
        label = "aggregate" if self.is_aggregate else f"window {self.window_index}"
        return f"<TrafficMatrix {label} nnz={self.nnz} mass={self.mass()}>"


def _split_keys(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return (keys >> np.uint64(32)).astype(np.uint32), (keys & np.uint64(0xFFFFFFFF)).astype(np.uint32)


def tally_window(batch: AnonBatch, window_index: int) -> TrafficMatrix:
    """Count the packets of one window into a sorted coordinate matrix."""
    if not isinstance(batch, AnonBatch):
        raise TypeError("traffic matrices are built from anonymized batches only")
    if len(batch) == 1:
        return TrafficMatrix(batch.src.copy(), batch.dst.copy(), np.ones(1, dtype=np.uint64), window_index)
    keys = (batch.src.astype(np.uint64) << np.uint64(32)) | batch.dst.astype(np.uint64)
    uniq, counts = np.unique(keys, return_counts=True)
    rows, cols = _split_keys(uniq)
    return TrafficMatrix(rows, cols, counts.astype(np.uint64), window_index)


def iter_windows(chunks: Iterable, size: int) -> Iterator:
    """Re-cut a stream of sliceable chunks into consecutive pieces of ``size``.

    Works on anything with ``len``, slicing and a ``concat`` helper taking a
    list: :class:`AnonBatch` or the raw ``_ArrayPair`` used by the pipeline.
    The last piece may be short; empty pieces are never produced.
    """
    pending: list = []
    held = 0
    for chunk in chunks:
        start = 0
        n = len(chunk)
        while start < n:
            take = min(size - held, n - start)
            pending.append(chunk[start:start + take])
            held += take
            start += take
            if held == size:
                yield type(pending[0]).concat(pending)
                pending = []
                held = 0
    if held:
        yield type(pending[0]).concat(pending)


def accumulate(batches: Iterable[AnonBatch], config: WindowConfig | int = WindowConfig()) -> Iterator[TrafficMatrix]:
    """Turn an anonymized pair stream into sequential window matrices.

    Matrix k covers pairs [k*W, (k+1)*W); a trailing partial window is kept.
    """
    size = config if isinstance(config, int) else config.packets_per_window
    if size < 1:
        raise ValueError("packets_per_window must be at least 1")

    def checked():
        for batch in batches:
            if not isinstance(batch, AnonBatch):
                raise TypeError("traffic matrices are built from anonymized batches only")
            yield batch

    for index, window in enumerate(iter_windows(checked(), size)):
        yield tally_window(window, index)


class _Reducer:
    """Running coordinate-wise sum over sorted matrices."""

    flush_at = 1 << 22

    def __init__(self):
        self.keys = np.empty(0, dtype=np.uint64)
        self.counts = _EMPTY_U64
        self.mass = 0
        self._pending: list[tuple[np.ndarray, np.ndarray]] = []
        self._pending_nnz = 0
        self.n_inputs = 0

    def add(self, m: TrafficMatrix) -> None:
        self.n_inputs += 1
        if m.nnz == 0:
            return
        self.mass += m.mass()
        self._pending.append((m.keys(), m.counts))
        self._pending_nnz += m.nnz
        if self._pending_nnz >= self.flush_at:
            self._flush()

    def _flush(self) -> None:
        if not self._pending:
            return
        keys = np.concatenate([self.keys] + [k for k, _ in self._pending])
        counts = np.concatenate([self.counts] + [c for _, c in self._pending])
        self._pending = []
        self._pending_nnz = 0
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        counts = counts[order]
        starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
        if self.mass <= U64_MAX:
            summed = np.add.reduceat(counts, starts)
        else:
            exact = np.add.reduceat(counts.astype(object), starts)
            if max(exact) > U64_MAX:
                raise CountOverflow("a summed cell exceeds the 64-bit count range")
            summed = exact.astype(np.uint64)
        self.keys = keys[starts]
        self.counts = summed.astype(np.uint64)

    def result(self) -> TrafficMatrix:
        self._flush()
        rows, cols = _split_keys(self.keys)
        return TrafficMatrix(rows, cols, self.counts, None)


def sum_matrices(matrices: Iterable[TrafficMatrix]) -> TrafficMatrix:
    """Coordinate-wise sum of matrices into one aggregate matrix.

    Streams its input; memory is bounded by the aggregate's size plus one
    flush buffer. Raises EmptyInput with no matrices and CountOverflow if a
    cell would exceed 2**64 - 1.
    """
    reducer = _Reducer()
    for m in matrices:
        reducer.add(m)
    if reducer.n_inputs == 0:
        raise EmptyInput("no matrices to sum")
    return reducer.result()
