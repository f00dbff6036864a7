"""Coordinate-format sparse containers for coefficient vectors and matrices.

Both containers store only exact nonzeros, sorted by coordinate, with no
duplicates. They are plain value types: solvers produce them, predictors
densify them for matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SparseVector:
    """Sparse vector as (index, value) pairs sorted by index."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d and aligned")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        if not np.all(np.isfinite(val)) or np.any(val == 0.0):
            raise ValueError("values must be finite and nonzero")

    @classmethod
    def from_dense(cls, x) -> "SparseVector":
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(dim=x.shape[0], indices=idx, values=x[idx])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class SparseMatrix:
    """Sparse matrix as (row, col, value) triplets sorted by (row, col)."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)
        object.__setattr__(self, "values", v)
        if not (r.shape == c.shape == v.shape) or r.ndim != 1:
            raise ValueError("triplet arrays must be 1-d and aligned")
        if r.size:
            if r.min() < 0 or r.max() >= self.shape[0]:
                raise ValueError("row index out of range")
            if c.min() < 0 or c.max() >= self.shape[1]:
                raise ValueError("col index out of range")
            order = r.astype(np.int64) * self.shape[1] + c
            if np.any(np.diff(order) <= 0):
                raise ValueError("triplets must be strictly (row, col)-sorted")
        if not np.all(np.isfinite(v)) or np.any(v == 0.0):
            raise ValueError("values must be finite and nonzero")

    @classmethod
    def from_dense(cls, m) -> "SparseMatrix":
        m = np.asarray(m, dtype=np.float64)
        r, c = np.nonzero(m)
        return cls(shape=m.shape, rows=r, cols=c, values=m[r, c])

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls(shape=(n, n), rows=idx, cols=idx, values=np.ones(n))

    @classmethod
    def zeros(cls, shape) -> "SparseMatrix":
        empty = np.empty(0)
        return cls(shape=shape, rows=empty, cols=empty, values=empty)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    def row_nnz(self) -> np.ndarray:
        counts = np.zeros(self.shape[0], dtype=np.int64)
        np.add.at(counts, self.rows, 1)
        return counts

    def to_triplets(self) -> list:
        return [
            [int(r), int(c), float(v)]
            for r, c, v in zip(self.rows, self.cols, self.values)
        ]

    @classmethod
    def from_triplets(cls, shape, triplets) -> "SparseMatrix":
        if len(triplets) == 0:
            return cls.zeros(shape)
        arr = np.asarray(triplets, dtype=np.float64)
        return cls(
            shape=shape,
            rows=arr[:, 0].astype(np.int64),
            cols=arr[:, 1].astype(np.int64),
            values=arr[:, 2],
        )
