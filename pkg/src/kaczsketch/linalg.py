"""Dense matrix/vector validation and the small kernels shared by every solver.

Matrices are plain ``numpy.ndarray`` objects in C (row-major) order with
``float64`` entries, so that row access in the iteration loops is contiguous.
"""

from __future__ import annotations

from os import PathLike

import numpy as np

RANK_RTOL = 1e-12


def as_matrix(A, name: str = "A") -> np.ndarray:
    """Return `A` as a finite, C-contiguous float64 2-D array.

    The input is copied only when its dtype or layout differ.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={A.ndim}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.isfinite(A).all():
        raise ValueError(f"{name} contains NaN or Inf entries")
    return A


def as_vector(x, name: str = "x", length: int | None = None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got ndim={x.ndim}")
    if length is not None and x.shape[0] != length:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {length}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf entries")
    return x


def row_norms_squared(A) -> np.ndarray:
    """Squared Euclidean norm of every row of `A`."""
    A = as_matrix(A)
    return np.einsum("ij,ij->i", A, A)


def residual(A, x, b) -> np.ndarray:
    """Return ``b - A @ x``."""
    A = as_matrix(A)
    m, n = A.shape
    x = as_vector(x, "x", n)
    b = as_vector(b, "b", m)
    return b - A @ x


def frobenius_norm_sq(A) -> float:
    """Squared Frobenius norm, summed over the per-row squared norms."""
    return float(np.sum(row_norms_squared(A)))


def singular_values(A) -> np.ndarray:
    return np.linalg.svd(as_matrix(A), compute_uv=False)


def numerical_rank(A) -> int:
    A = as_matrix(A)
    s = singular_values(A)
    return int(np.sum(s > max(A.shape) * s[0] * RANK_RTOL))


def smallest_nonzero_singular_value(A) -> float:
    """Smallest singular value above the numerical-rank threshold.

    A singular value counts as nonzero when it exceeds
    ``max(m, n) * sigma_max * 1e-12``. Uses a full SVD, so this is meant for
    desk-scale matrices.
    """
    A = as_matrix(A)
    s = singular_values(A)
    if s[0] == 0.0:
        raise ValueError("matrix is identically zero; no nonzero singular value")
    nonzero = s[s > max(A.shape) * s[0] * RANK_RTOL]
    return float(nonzero[-1])


def load_matrix_market(path: str | PathLike) -> np.ndarray:
    """Read a MatrixMarket file (coordinate or array) into a dense matrix."""
    from scipy.io import mmread

    M = mmread(path)
    if hasattr(M, "toarray"):
        M = M.toarray()
    if np.iscomplexobj(M):
        raise ValueError("complex MatrixMarket files are not supported")
    return as_matrix(np.asarray(M, dtype=np.float64))


def save_matrix_market(path: str | PathLike, A) -> None:
    from scipy.io import mmwrite

    mmwrite(path, as_matrix(A), field="real")
