"""Dense linear algebra used across the package.

Matrices are plain 2-D ``numpy.ndarray`` objects.  Storage may be float32 but
every routine here accumulates in float64.  The SPD routines sit on LAPACK's
Cholesky (``?potrf``) so that a failing pivot can be reported by index.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.linalg import lapack

from .errors import ShapeError, SingularMatrixError

SYMMETRY_RTOL = 1e-6


class NormKind(str, Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a 2-D float64 array (no copy if already one)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def column_norms(x, kind: NormKind | str = NormKind.L2) -> np.ndarray:
    """Per-column norm of ``x``; entry j aggregates column j over all rows."""
    x = as_matrix(x, "x")
    if x.shape[0] == 0:
        raise ShapeError("column_norms needs at least one row")
    kind = NormKind(kind)
    if kind is NormKind.L2:
        return np.sqrt(np.einsum("ij,ij->j", x, x))
    if kind is NormKind.L1:
        return np.abs(x).sum(axis=0)
    return np.abs(x).max(axis=0)


def check_symmetric(h: np.ndarray, rtol: float = SYMMETRY_RTOL) -> None:
    if h.shape[0] != h.shape[1]:
        raise ShapeError(f"expected a square matrix, got {h.shape}")
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    dev = float(np.max(np.abs(h - h.T))) if h.size else 0.0
    if dev > rtol * max(scale, 1e-300):
        raise ShapeError(f"matrix is not symmetric (max asymmetry {dev:.3g})")


def cholesky(h) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises SingularMatrixError with the zero-based index of the first
    non-positive pivot.
    """
    h = as_matrix(h, "h")
    check_symmetric(h)
    if not np.all(np.isfinite(h)):
        raise SingularMatrixError("matrix has non-finite entries")
    if h.shape[0] == 0:
        return np.zeros((0, 0))
    c, info = lapack.dpotrf(h, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        pivot = info - 1
        raise SingularMatrixError(
            f"matrix is not positive definite (pivot {pivot} <= 0); "
            "increase the dampening lambda above 0",
            pivot=pivot,
        )
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def cho_solve(factor: np.ndarray, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.shape[0]:
        raise ShapeError(f"rhs length {rhs.shape[0]} != matrix size {factor.shape[0]}")
    if factor.shape[0] == 0:
        return np.zeros_like(rhs)
    x, info = lapack.dpotrs(factor, rhs, lower=1)
    if info != 0:  # pragma: no cover
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def spd_solve(h, rhs) -> np.ndarray:
    """Solve ``h @ v = rhs`` for symmetric positive definite ``h``."""
    return cho_solve(cholesky(h), rhs)


def spd_inverse(h) -> np.ndarray:
    factor = cholesky(h)
    if factor.shape[0] == 0:
        return factor
    inv, info = lapack.dpotri(factor, lower=1)
    if info != 0:  # pragma: no cover - potrf already succeeded
        raise SingularMatrixError("dpotri failed", pivot=info - 1)
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def inverse_diagonal(h) -> np.ndarray:
    """``diag(inv(h))`` without forming the full inverse.

    With h = L L^T, inv(h) = L^-T L^-1, so entry j is the squared norm of
    column j of L^-1.
    """
    factor = cholesky(h)
    if factor.shape[0] == 0:
        return np.zeros(0)
    linv, info = lapack.dtrtri(factor, lower=1)
    if info != 0:  # pragma: no cover
        raise SingularMatrixError("dtrtri failed", pivot=info - 1)
    return np.einsum("ij,ij->j", linv, linv)
