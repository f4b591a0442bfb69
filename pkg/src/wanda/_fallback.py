"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import itertools
from math import comb

import numpy as np

_CHUNK = 65536


def prune_lowest(scores: np.ndarray, k: int) -> np.ndarray:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    g, n = scores.shape
    out = np.ones((g, n), dtype=bool)
    if k <= 0 or n == 0:
        return out
    if k >= n:
        out[:] = False
        return out
    # stable sort keeps index order among equal scores
    order = np.argsort(scores, axis=1, kind="stable")[:, :k]
    np.put_along_axis(out, order, False, axis=1)
    return out


def subset_sq_errors(gram: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
    gram = np.asarray(gram, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if k == 0:
        return np.zeros(1)
    total = comb(n, k)
    out = np.empty(total)
    combos = itertools.combinations(range(n), k)
    done = 0
    while done < total:
        take = min(_CHUNK, total - done)
        idx = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, take)), dtype=np.intp, count=take * k)
        idx = idx.reshape(take, k)
        v = w[idx]
        sub = gram[idx[:, :, None], idx[:, None, :]]
        out[done:done + take] = np.einsum("ca,cab,cb->c", v, sub, v)
        done += take
    return out
