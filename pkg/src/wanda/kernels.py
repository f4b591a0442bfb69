"""Backend selection for the hot kernels.

The compiled extension ``wanda._kernels`` is used when it imports; otherwise
the numpy fallback takes over.  Set ``WANDA_PURE_PYTHON=1`` to force the
fallback.  Both backends return identical masks.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _fallback


def _load_compiled() -> ModuleType | None:
    if os.environ.get("WANDA_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"
_active: ModuleType = _compiled if _compiled is not None else _fallback


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        return _active
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def prune_lowest(scores, k: int, backend: str | None = None) -> np.ndarray:
    """Kept-mask that prunes the ``k`` lowest entries in each row of ``scores``."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    return get_backend(backend).prune_lowest(scores, int(k))


def subset_sq_errors(gram, w, k: int, backend: str | None = None) -> np.ndarray:
    """Squared error of zeroing each k-subset of ``w``, lexicographic order."""
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    return get_backend(backend).subset_sq_errors(gram, w, int(k))
