"""Sparse/dense kernels shared by the embedding and regression code.

Sparse matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted,
deduplicated indices, float64 data). Dense matrices are C-ordered float64
``numpy`` arrays.
"""

from __future__ import annotations

import contextlib

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from threadpoolctl import threadpool_limits


class ShapeError(ValueError):
    """Operand dimensions do not agree."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot."""


def as_sparse(matrix, shape: tuple[int, int] | None = None) -> sp.csr_matrix:
    """Return a canonical float64 CSR copy of ``matrix``.

    Duplicate ``(row, col)`` entries are summed, explicit zeros dropped and
    column indices sorted within each row.
    """
    out = sp.csr_matrix(matrix, shape=shape, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def from_triples(rows, cols, values, shape: tuple[int, int]) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    m, n = shape
    if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise IndexError(f"entry index out of range for shape {shape}")
    coo = sp.coo_matrix((np.asarray(values, dtype=np.float64), (rows, cols)), shape=shape)
    return as_sparse(coo)


def row_nnz(matrix: sp.csr_matrix) -> np.ndarray:
    return np.diff(matrix.indptr).astype(np.int64)


def col_nnz(matrix: sp.csr_matrix) -> np.ndarray:
    return np.bincount(matrix.indices, minlength=matrix.shape[1]).astype(np.int64)


def sparse_dense_matmul(s: sp.spmatrix, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or s.shape[1] != d.shape[0]:
        raise ShapeError(f"cannot multiply {s.shape} by {d.shape}")
    return np.ascontiguousarray(s @ d)


def gram(q: np.ndarray) -> np.ndarray:
    """``q.T @ q``, made exactly symmetric by mirroring the upper triangle."""
    q = np.asarray(q, dtype=np.float64)
    g = q.T @ q
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def cholesky(a: np.ndarray):
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "matrix is not positive definite (regularization too small?)"
        ) from exc


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ShapeError(f"cannot solve {a.shape} system with rhs {b.shape}")
    return scipy.linalg.cho_solve(cholesky(a), b)


@contextlib.contextmanager
def deterministic(enabled: bool = True):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield
