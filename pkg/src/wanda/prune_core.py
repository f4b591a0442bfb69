"""Pruning metrics and mask selection.

Three scores are provided, all "higher means more important":

* magnitude  ``|W_ij|``
* wanda      ``|W_ij| * ||X_j||``  (column norm of the layer input)
* sparsegpt  ``W_ij**2 / inv(X^T X + lam I)_jj``

Selection prunes the lowest scores inside each comparison group.  A group of
``G`` weights loses exactly ``int(G * s)`` of them; ties go to the lower flat
index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import ArgumentError, ShapeError, SingularMatrixError
from .numerics import NormKind, as_matrix, column_norms, inverse_diagonal

REDUCTION_EPS = 1e-12
DEFAULT_DAMPING = 0.01


class Metric(str, Enum):
    MAGNITUDE = "magnitude"
    WANDA = "wanda"
    SPARSEGPT = "sparsegpt"


@dataclass(frozen=True)
class Grouping:
    """A comparison group layout.

    ``axis="layer"`` ranks the whole matrix at once.  ``axis="output"`` with
    blocksize b groups b consecutive rows; ``axis="input"`` groups b
    consecutive columns across all rows.  Per-output is ``("output", 1)``.
    """

    axis: str
    blocksize: int = 1

    def __post_init__(self):
        if self.axis not in ("layer", "output", "input"):
            raise ArgumentError(f"unknown grouping axis {self.axis!r}")
        if self.blocksize < 1:
            raise ArgumentError(f"blocksize must be >= 1, got {self.blocksize}")

    @classmethod
    def parse(cls, text: str) -> "Grouping":
        """Parse ``per-layer``, ``per-output``, ``per-input``, ``in:K`` or ``out:K``."""
        named = {"per-layer": cls("layer"), "per-output": cls("output"), "per-input": cls("input")}
        if text in named:
            return named[text]
        m = re.fullmatch(r"(in|out):(\d+)", text)
        if not m:
            raise ArgumentError(f"bad grouping {text!r}; expected per-layer|per-output|per-input|in:K|out:K")
        return cls("input" if m.group(1) == "in" else "output", int(m.group(2)))

    def __str__(self) -> str:
        if self.axis == "layer":
            return "per-layer"
        if self.blocksize == 1:
            return f"per-{self.axis}"
        return f"{'in' if self.axis == 'input' else 'out'}:{self.blocksize}"


PER_LAYER = Grouping("layer")
PER_OUTPUT = Grouping("output")
PER_INPUT = Grouping("input")


@dataclass(frozen=True)
class Ratio:
    s: float

    def __post_init__(self):
        if not (0.0 <= self.s < 1.0):
            raise ArgumentError(f"sparsity ratio must lie in [0, 1), got {self.s}")

    def __str__(self) -> str:
        return repr(float(self.s))


@dataclass(frozen=True)
class NM:
    n: int
    m: int

    def __post_init__(self):
        if self.m < 1 or not (0 <= self.n <= self.m):
            raise ArgumentError(f"N:M needs 0 <= n <= m and m >= 1, got {self.n}:{self.m}")

    @classmethod
    def parse(cls, text: str) -> "NM":
        m = re.fullmatch(r"(\d+):(\d+)", text)
        if not m:
            raise ArgumentError(f"bad N:M spec {text!r}; expected e.g. 2:4")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.n}:{self.m}"


def prune_quota(group_size: int, s: float) -> int:
    """Number pruned from a group; mirrors ``int(C_in * s)`` truncation."""
    return int(group_size * s)


def _check_scores(s) -> np.ndarray:
    s = as_matrix(s, "scores")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ArgumentError("scores must be finite and non-negative")
    return s


def score_magnitude(w) -> np.ndarray:
    return np.abs(as_matrix(w, "w"))


def score_wanda(w, norms) -> np.ndarray:
    w = as_matrix(w, "w")
    norms = np.asarray(norms, dtype=np.float64)
    if norms.shape != (w.shape[1],):
        raise ShapeError(f"norms has shape {norms.shape}, weight has {w.shape[1]} inputs")
    if np.any(norms < 0):
        raise ArgumentError("feature norms must be non-negative")
    return np.abs(w) * norms[None, :]


def auto_lambda(x) -> float:
    """Default dampening: 1% of the mean diagonal of X^T X (1.0 if X is all zeros)."""
    x = as_matrix(x, "x")
    lam = DEFAULT_DAMPING * float(np.mean(np.einsum("ij,ij->j", x, x)))
    return lam if lam > 0 else 1.0


def hessian_matrix(x, lam: float) -> np.ndarray:
    x = as_matrix(x, "x")
    h = x.T @ x
    h = 0.5 * (h + h.T)
    h[np.diag_indices_from(h)] += lam
    return h


def score_sparsegpt(w, x, lam: float | None = None) -> np.ndarray:
    """``W**2 / diag(inv(X^T X + lam I))``; ``lam=None`` picks :func:`auto_lambda`."""
    w = as_matrix(w, "w")
    x = as_matrix(x, "x")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"calibration has {x.shape[1]} features, weight has {w.shape[1]} inputs")
    if lam is None:
        lam = auto_lambda(x)
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    try:
        dinv = inverse_diagonal(hessian_matrix(x, lam))
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"X^T X + {lam:g} I is singular at pivot {exc.pivot}; use lambda > 0", pivot=exc.pivot
        ) from exc
    return w * w / dinv[None, :]


def verify_reduction(w, x) -> float:
    """Max relative gap between the diagonal second-order score and wanda squared.

    Left side uses ``diag(X^T X)`` from an explicit matrix product, right
    side the column norms; they agree up to rounding.
    """
    w = as_matrix(w, "w")
    x = as_matrix(x, "x")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"calibration has {x.shape[1]} features, weight has {w.shape[1]} inputs")
    diag = np.diagonal(x.T @ x)
    a = (w * w) * diag[None, :]
    b = score_wanda(w, column_norms(x, NormKind.L2)) ** 2
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), REDUCTION_EPS)))


def _select_blocks(scores: np.ndarray, s: float, axis: str, b: int) -> np.ndarray:
    rows, cols = scores.shape
    kept = np.ones_like(scores, dtype=bool)
    if axis == "output":
        if b > rows:
            raise ArgumentError(f"output blocksize {b} exceeds {rows} rows")
        full = (rows // b) * b
        if full:
            groups = scores[:full].reshape(rows // b, b * cols)
            kept[:full] = kernels.prune_lowest(groups, prune_quota(b * cols, s)).reshape(full, cols)
        if full < rows:
            tail = scores[full:].reshape(1, -1)
            kept[full:] = kernels.prune_lowest(tail, prune_quota(tail.size, s)).reshape(rows - full, cols)
        return kept
    if b > cols:
        raise ArgumentError(f"input blocksize {b} exceeds {cols} columns")
    nb, full = cols // b, (cols // b) * b
    if nb:
        # group g holds scores[:, g*b:(g+1)*b] flattened row-major, preserving flat index order
        groups = scores[:, :full].reshape(rows, nb, b).transpose(1, 0, 2).reshape(nb, rows * b)
        km = kernels.prune_lowest(groups, prune_quota(rows * b, s))
        kept[:, :full] = km.reshape(nb, rows, b).transpose(1, 0, 2).reshape(rows, full)
    if full < cols:
        tail = scores[:, full:]
        km = kernels.prune_lowest(tail.reshape(1, -1), prune_quota(tail.size, s))
        kept[:, full:] = km.reshape(tail.shape)
    return kept


def select_mask(scores, grouping: Grouping, target: Ratio | float) -> np.ndarray:
    """Kept-mask (True = keep) for an unstructured sparsity ratio."""
    scores = _check_scores(scores)
    s = target.s if isinstance(target, Ratio) else Ratio(float(target)).s
    if grouping.axis == "layer":
        flat = scores.reshape(1, -1)
        return kernels.prune_lowest(flat, prune_quota(flat.size, s)).reshape(scores.shape)
    return _select_blocks(scores, s, grouping.axis, grouping.blocksize)


def select_nm_mask(scores, n: int, m: int) -> np.ndarray:
    """Keep the n highest of every aligned run of m inputs in each row."""
    scores = _check_scores(scores)
    NM(n, m)
    rows, cols = scores.shape
    if cols % m:
        raise ArgumentError(f"N:M block size {m} does not divide {cols} inputs")
    blocks = scores.reshape(rows * (cols // m), m)
    return kernels.prune_lowest(blocks, m - n).reshape(rows, cols)


def apply_mask(w, mask) -> np.ndarray:
    """Zero pruned entries; kept entries are copied bit-for-bit, dtype preserved."""
    w = np.asarray(w)
    mask = np.asarray(mask, dtype=bool)
    if w.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} != weight shape {w.shape}")
    return np.where(mask, w, np.zeros((), dtype=w.dtype))


def compute_scores(metric: Metric | str, w, x, norm: NormKind | str = NormKind.L2, lam: float | None = None):
    metric = Metric(metric)
    if metric is Metric.MAGNITUDE:
        return score_magnitude(w)
    if metric is Metric.WANDA:
        return score_wanda(w, column_norms(x, norm))
    return score_sparsegpt(w, x, lam)
