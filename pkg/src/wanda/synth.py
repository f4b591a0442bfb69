"""Seeded generators for random layered models and outlier-feature batches.

Randomness comes from numpy's PCG64.  Each generator draws from its own
stream: the user seed becomes ``SeedSequence(seed, spawn_key=(stream,))``
with stream 0 for models and stream 1 for calibration batches, so a model
and a batch built from the same seed are statistically independent.  Batches
split once more: ``(1, 0)`` picks outlier columns, ``(1, 1)`` draws values.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ArgumentError
from .model_store import Activation, CalibrationBatch, LinearLayer, ModelCheckpoint

MODEL_STREAM = 0
BATCH_STREAM = 1
DEFAULT_OUTLIER_FRAC = 1 / 16
DEFAULT_OUTLIER_SCALE = 100.0


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    if seed < 0:
        raise ArgumentError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream)))


def gen_random_model(dims, seed: int) -> ModelCheckpoint:
    """Layer k maps dims[k] -> dims[k+1]; weights ~ N(0, 1/dims[k]).

    ReLU follows every layer except the last.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ArgumentError(f"need at least two dims (input and output), got {dims}")
    if any(d < 1 for d in dims):
        raise ArgumentError(f"all dims must be >= 1, got {dims}")
    rng = make_rng(seed, MODEL_STREAM)
    layers = []
    n = len(dims) - 1
    for k in range(n):
        c_in, c_out = dims[k], dims[k + 1]
        w = rng.standard_normal((c_out, c_in)) / math.sqrt(c_in)
        act = Activation.RELU if k < n - 1 else Activation.NONE
        layers.append(LinearLayer(f"fc{k}", w.astype(np.float32), act))
    return ModelCheckpoint(tuple(layers))


def outlier_count(c_in: int, outlier_frac: float) -> int:
    # round half up; Python's round() is banker's rounding
    return int(math.floor(outlier_frac * c_in + 0.5))


def outlier_columns(c_in: int, outlier_frac: float, seed: int) -> np.ndarray:
    """Sorted indices of the columns :func:`gen_outlier_batch` scales."""
    rng = make_rng(seed, BATCH_STREAM, 0)
    return np.sort(rng.choice(c_in, size=outlier_count(c_in, outlier_frac), replace=False))


def gen_outlier_batch(
    n_tokens: int,
    c_in: int,
    outlier_frac: float = DEFAULT_OUTLIER_FRAC,
    outlier_scale: float = DEFAULT_OUTLIER_SCALE,
    seed: int = 0,
) -> CalibrationBatch:
    """Standard-normal activations with a fixed set of scaled feature columns.

    The outlier columns are the same for every token.  The unscaled draws
    depend only on the seed and shape, and a longer batch extends a shorter
    one with the same seed and ``c_in`` (its first rows are identical).
    """
    if n_tokens < 1 or c_in < 1:
        raise ArgumentError(f"n_tokens and c_in must be >= 1, got {n_tokens}, {c_in}")
    if not (0.0 <= outlier_frac <= 1.0):
        raise ArgumentError(f"outlier_frac must lie in [0, 1], got {outlier_frac}")
    if not (outlier_scale > 0 and math.isfinite(outlier_scale)):
        raise ArgumentError(f"outlier_scale must be positive and finite, got {outlier_scale}")
    cols = outlier_columns(c_in, outlier_frac, seed)
    base = make_rng(seed, BATCH_STREAM, 1).standard_normal((n_tokens, c_in))
    base[:, cols] *= outlier_scale
    return CalibrationBatch(base.astype(np.float32))
