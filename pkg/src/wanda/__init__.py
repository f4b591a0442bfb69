"""One-shot pruning of layered linear models by weights and activations."""

from .kernels import BACKEND
from .model_store import (
    Activation,
    CalibrationBatch,
    LinearLayer,
    ModelCheckpoint,
    load_calibration,
    load_checkpoint,
    save_calibration,
    save_checkpoint,
)
from .numerics import NormKind
from .prune_core import (
    Grouping,
    NM,
    Ratio,
    apply_mask,
    score_magnitude,
    score_sparsegpt,
    score_wanda,
    select_mask,
    select_nm_mask,
    verify_reduction,
)

__version__ = "0.1.0"
