# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.  Must agree exactly with ``wanda._fallback``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _before(double sa, Py_ssize_t ia, double sb, Py_ssize_t ib) noexcept nogil:
    # strict order on (score, index): lower score first, lower index on ties
    return sa < sb or (sa == sb and ia < ib)


cdef void _sift_down(double[::1] hs, Py_ssize_t[::1] hi, Py_ssize_t size, Py_ssize_t pos) noexcept nogil:
    # max-heap under _before
    cdef Py_ssize_t child, largest
    cdef double ts
    cdef Py_ssize_t ti
    while True:
        largest = pos
        child = 2 * pos + 1
        if child < size and _before(hs[largest], hi[largest], hs[child], hi[child]):
            largest = child
        child += 1
        if child < size and _before(hs[largest], hi[largest], hs[child], hi[child]):
            largest = child
        if largest == pos:
            return
        ts = hs[pos]; hs[pos] = hs[largest]; hs[largest] = ts
        ti = hi[pos]; hi[pos] = hi[largest]; hi[largest] = ti
        pos = largest


def prune_lowest(const double[:, ::1] scores, Py_ssize_t k):
    """Boolean kept-mask pruning the k lowest entries of every row.

    Ordering is by (score, column index), so ties prune the lower index.
    """
    cdef Py_ssize_t g = scores.shape[0], n = scores.shape[1]
    cdef Py_ssize_t r, j, t, size
    out = np.ones((g, n), dtype=np.bool_)
    if k <= 0 or n == 0:
        return out
    if k >= n:
        out[:, :] = False
        return out
    cdef cnp.npy_bool[:, ::1] kept = out.view(np.uint8)
    cdef double[::1] hs = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] hi = np.empty(k, dtype=np.intp)
    with nogil:
        for r in range(g):
            size = 0
            for j in range(n):
                if size < k:
                    # sift up
                    t = size
                    size += 1
                    hs[t] = scores[r, j]
                    hi[t] = j
                    while t > 0 and _before(hs[(t - 1) // 2], hi[(t - 1) // 2], hs[t], hi[t]):
                        hs[t], hs[(t - 1) // 2] = hs[(t - 1) // 2], hs[t]
                        hi[t], hi[(t - 1) // 2] = hi[(t - 1) // 2], hi[t]
                        t = (t - 1) // 2
                elif _before(scores[r, j], j, hs[0], hi[0]):
                    hs[0] = scores[r, j]
                    hi[0] = j
                    _sift_down(hs, hi, size, 0)
            for t in range(size):
                kept[r, hi[t]] = 0
    return out


def subset_sq_errors(const double[:, ::1] gram, const double[::1] w, Py_ssize_t k):
    """Squared output error of zeroing each k-subset of ``w``.

    Subsets are visited in lexicographic order (itertools.combinations order);
    entry i is ``w_P @ gram[P][:, P] @ w_P`` for the i-th subset P.
    """
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t a, b, i, count
    cdef double acc, inner
    from math import comb
    count = comb(n, k)
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] errs = out
    if k == 0:
        errs[0] = 0.0
        return out
    cdef Py_ssize_t[::1] idx = np.arange(k, dtype=np.intp)
    with nogil:
        for i in range(count):
            acc = 0.0
            for a in range(k):
                inner = 0.0
                for b in range(k):
                    inner = inner + gram[idx[a], idx[b]] * w[idx[b]]
                acc = acc + w[idx[a]] * inner
            errs[i] = acc
            # next combination
            a = k - 1
            while a >= 0 and idx[a] == n - k + a:
                a -= 1
            if a < 0:
                break
            idx[a] += 1
            for b in range(a + 1, k):
                idx[b] = idx[b - 1] + 1
    return out
