"""Least-squares weight updates on top of a pruning mask.

For one output row ``w`` and calibration inputs ``X`` the update keeps the
support fixed and minimises ``||X w' - X w||^2 + lam ||w' - w||^2``.  The
normal equations for the free entries U are

    H[U, U] w'[U] = (H (w - z))[U],      H = X^T X + lam I

where ``z`` holds the entries that are not free (zeros for pruned weights,
frozen values for already-processed columns).  Every row is solved exactly
and independently, so results do not depend on how rows are scheduled.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError, ShapeError, SingularMatrixError
from .numerics import NormKind, as_matrix, check_symmetric, cholesky, cho_solve, column_norms, inverse_diagonal
from .prune_core import Metric, auto_lambda, hessian_matrix, prune_quota


@dataclass(frozen=True)
class Hessian:
    h: np.ndarray
    lam: float

    @property
    def size(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class UpdatePolicy:
    kind: str = "none"
    blocksize: int = 128

    def __post_init__(self):
        if self.kind not in ("none", "sequential", "iterative"):
            raise ArgumentError(f"unknown update policy {self.kind!r}")
        if self.blocksize < 1:
            raise ArgumentError(f"blocksize must be >= 1, got {self.blocksize}")

    @classmethod
    def parse(cls, text: str) -> "UpdatePolicy":
        if text in ("none", "sequential"):
            return cls(text)
        m = re.fullmatch(r"iterative:(\d+)", text)
        if not m:
            raise ArgumentError(f"bad update policy {text!r}; expected none|sequential|iterative:K")
        return cls("iterative", int(m.group(1)))

    def __str__(self) -> str:
        return f"iterative:{self.blocksize}" if self.kind == "iterative" else self.kind


def build_hessian(x, lam: float | None = None) -> Hessian:
    """``X^T X + lam I``; ``lam=None`` uses the 1%-of-mean-diagonal default."""
    x = as_matrix(x, "x")
    if x.shape[0] == 0:
        raise ShapeError("calibration matrix has no rows")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("calibration matrix has non-finite entries")
    if lam is None:
        lam = auto_lambda(x)
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    return Hessian(hessian_matrix(x, lam), float(lam))


def _solve_free(h: np.ndarray, target: np.ndarray, fixed: np.ndarray, free: np.ndarray) -> np.ndarray:
    out = fixed.copy()
    if free.size == 0:
        return out
    rhs = (h @ (target - fixed))[free]
    try:
        factor = cholesky(h[np.ix_(free, free)])
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"Hessian block over kept weights is singular (pivot {exc.pivot}); use lambda > 0",
            pivot=exc.pivot,
        ) from exc
    out[free] = cho_solve(factor, rhs)
    return out


def obs_update_row(w_row, kept, h: Hessian | np.ndarray) -> np.ndarray:
    """Zero the pruned entries and re-fit the kept ones by least squares."""
    hm = h.h if isinstance(h, Hessian) else as_matrix(h, "h")
    w_row = np.asarray(w_row, dtype=np.float64)
    kept = np.asarray(kept, dtype=bool)
    if w_row.shape != kept.shape or hm.shape != (w_row.size, w_row.size):
        raise ShapeError(f"row {w_row.shape}, mask {kept.shape} and Hessian {hm.shape} disagree")
    free = np.flatnonzero(kept)
    return _solve_free(hm, w_row, np.zeros_like(w_row), free)


def _map_rows(fn, n_rows: int, threads: int):
    if threads <= 1 or n_rows <= 1:
        return [fn(i) for i in range(n_rows)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_rows)))


def sequential_update(w, mask, h: Hessian | np.ndarray, threads: int = 1) -> np.ndarray:
    """Apply :func:`obs_update_row` to every row (rows with nothing pruned are left as-is)."""
    w = as_matrix(w, "w")
    mask = np.asarray(mask, dtype=bool)
    hm = h.h if isinstance(h, Hessian) else as_matrix(h, "h")
    if mask.shape != w.shape:
        raise ShapeError(f"mask shape {mask.shape} != weight shape {w.shape}")
    if hm.shape != (w.shape[1], w.shape[1]):
        raise ShapeError(f"Hessian {hm.shape} does not match {w.shape[1]} inputs")
    check_symmetric(hm)

    def row(i):
        if mask[i].all():
            return w[i].copy()
        return obs_update_row(w[i], mask[i], hm)

    return np.stack(_map_rows(row, w.shape[0], threads))


def _row_scores(metric: Metric, w_part, norms_part, dinv_part):
    if metric is Metric.MAGNITUDE:
        return np.abs(w_part)
    if metric is Metric.WANDA:
        return np.abs(w_part) * norms_part
    return w_part * w_part / dinv_part


def iterative_prune_update(
    w,
    x,
    metric: Metric | str,
    s: float,
    blocksize: int,
    lam: float | None = None,
    norm: NormKind | str = NormKind.L2,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Interleave pruning and compensation over aligned blocks of input columns.

    For each block (left to right) the scores are recomputed on the current
    weights, ``int(width * s)`` entries per row are pruned within the block,
    and every still-kept weight in this and later blocks is re-fit.  Columns
    of earlier blocks stay frozen.  Feature norms and the Hessian come from
    the original ``x`` and are not refreshed inside the layer.
    """
    metric = Metric(metric)
    w = as_matrix(w, "w")
    x = as_matrix(x, "x")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"calibration has {x.shape[1]} features, weight has {w.shape[1]} inputs")
    if not (0.0 <= s < 1.0):
        raise ArgumentError(f"sparsity ratio must lie in [0, 1), got {s}")
    if blocksize < 1:
        raise ArgumentError(f"blocksize must be >= 1, got {blocksize}")
    hess = build_hessian(x, lam)
    hm = hess.h
    n_cols = w.shape[1]
    norms = column_norms(x, norm) if metric is Metric.WANDA else None
    dinv = inverse_diagonal(hm) if metric is Metric.SPARSEGPT else None
    starts = list(range(0, n_cols, blocksize))

    def row(i):
        target = w[i]
        cur = target.copy()
        kept = np.ones(n_cols, dtype=bool)
        for c0 in starts:
            c1 = min(c0 + blocksize, n_cols)
            q = prune_quota(c1 - c0, s)
            if q == 0:
                continue
            sl = slice(c0, c1)
            sc = _row_scores(
                metric, cur[sl], None if norms is None else norms[sl], None if dinv is None else dinv[sl]
            )
            kept[sl] = kernels.prune_lowest(sc[None, :], q)[0]
            free = np.flatnonzero(kept[c0:]) + c0
            fixed = np.where(kept, cur, 0.0)
            fixed[free] = 0.0
            cur = _solve_free(hm, target, fixed, free)
        return cur, kept

    results = _map_rows(row, w.shape[0], threads)
    return np.stack([r[0] for r in results]), np.stack([r[1] for r in results])
