"""Dense numeric substrate.

Arrays are plain numpy ndarrays. The only things added on top are a
matrix product with a pinned accumulation order and a packed
lower-triangular matrix with forward-substitution inversion.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    def __init__(self, row: int):
        super().__init__(f"zero pivot at row {row}: lower-triangular matrix is singular")
        self.row = row


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated strictly left to right over the inner index.

    Every output element is built as ``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...``
    with separate multiply and add, so the result for a given row does not
    depend on how many other rows are in the batch. This is what lets the
    streaming and parallel engines agree bit for bit.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype, np.float32)
    a = a.astype(dtype, copy=False)
    b = b.astype(dtype, copy=False)
    out = np.zeros((m, n), dtype=dtype)
    for i in range(k):
        out += a[:, i : i + 1] * b[i : i + 1, :]
    return out


def packed_index(row: int, col: int) -> int:
    """Position of entry (row, col), col <= row, in row-wise packed storage."""
    return row * (row + 1) // 2 + col


def packed_size(order: int) -> int:
    return order * (order + 1) // 2


class LowerTriangular:
    """Lower-triangular matrix kept as its T(T+1)/2 packed entries, row by row.

    Entries above the diagonal have no storage, so they are zero by
    construction.
    """

    __slots__ = ("order", "entries")

    def __init__(self, order: int, entries):
        entries = np.array(entries, dtype=np.result_type(np.asarray(entries).dtype, np.float32))
        if order < 1:
            raise ShapeError("order must be at least 1")
        if entries.shape != (packed_size(order),):
            raise ShapeError(
                f"order {order} needs {packed_size(order)} packed entries, got shape {entries.shape}"
            )
        self.order = order
        self.entries = entries

    @classmethod
    def from_dense(cls, dense) -> "LowerTriangular":
        dense = np.asarray(dense)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ShapeError(f"expected a square matrix, got {dense.shape}")
        if np.any(np.triu(dense, 1) != 0):
            raise ValueError("matrix has nonzero entries above the diagonal")
        rows, cols = np.tril_indices(dense.shape[0])
        return cls(dense.shape[0], dense[rows, cols])

    @classmethod
    def identity(cls, order: int, dtype=np.float64) -> "LowerTriangular":
        return cls.from_dense(np.eye(order, dtype=dtype))

    @property
    def dtype(self):
        return self.entries.dtype

    def dense(self) -> np.ndarray:
        out = np.zeros((self.order, self.order), dtype=self.entries.dtype)
        rows, cols = np.tril_indices(self.order)
        out[rows, cols] = self.entries
        return out

    def diagonal(self) -> np.ndarray:
        idx = [packed_index(i, i) for i in range(self.order)]
        return self.entries[idx]

    def row(self, i: int) -> np.ndarray:
        """Entries (i, 0..i)."""
        start = packed_index(i, 0)
        return self.entries[start : start + i + 1]

    def column(self, j: int) -> np.ndarray:
        """Entries (j..T-1, j)."""
        return self.entries[[packed_index(i, j) for i in range(j, self.order)]]

    def copy(self) -> "LowerTriangular":
        return LowerTriangular(self.order, self.entries.copy())

    def __eq__(self, other):
        if not isinstance(other, LowerTriangular):
            return NotImplemented
        return self.order == other.order and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"LowerTriangular(order={self.order}, entries={self.entries!r})"


def tri_invert(m: LowerTriangular) -> LowerTriangular:
    """Inverse of a lower-triangular matrix by forward substitution.

    Solves ``M X = I`` one column at a time. The inverse of a lower-triangular
    matrix is lower-triangular, so only the packed lower half is produced.
    """
    t = m.order
    diag = m.diagonal()
    for i in range(t):
        if diag[i] == 0:
            raise SingularMatrixError(i)
    a = m.dense().astype(np.float64)
    inv = np.zeros_like(a)
    for j in range(t):
        inv[j, j] = 1.0 / a[j, j]
        for i in range(j + 1, t):
            inv[i, j] = -np.dot(a[i, j:i], inv[j:i, j]) / a[i, i]
    return LowerTriangular.from_dense(inv.astype(m.dtype))


def tri_matmul(m: LowerTriangular, b: np.ndarray) -> np.ndarray:
    """``m.dense() @ b`` touching only the stored lower triangle.

    Accumulates column by column, ``out[k:] += m[k:, k] * b[k]`` for k = 0..T-1,
    which per output element is the same left-to-right order as ``matmul``
    minus the structural zeros.
    """
    b = np.asarray(b)
    if b.ndim < 1 or b.shape[0] != m.order:
        raise ShapeError(f"order-{m.order} matrix cannot multiply operand of shape {b.shape}")
    dtype = np.result_type(m.dtype, b.dtype, np.float32)
    b = b.astype(dtype, copy=False)
    out = np.zeros(b.shape, dtype=dtype)
    tail = (slice(None),) + (None,) * (b.ndim - 1)
    for k in range(m.order):
        out[k:] += m.column(k).astype(dtype)[tail] * b[k]
    return out
