# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: candidate scanning and Lempel-Ziv complexity."""

import numpy as np

cdef enum:
    FIRST_MATCH = 0
    TRUE_COUNT = 1


def scan_candidates(pred, real, int policy=0, double param=1.0):
    cdef const long long[::1] p = np.ascontiguousarray(pred, dtype=np.int64)
    cdef const long long[::1] r = np.ascontiguousarray(real, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i, count = 0
    cdef Py_ssize_t start = 0, last_bad = 0
    cdef long n_true = 0, n_false = 0, run_true = 0
    cdef long need = 1
    cdef bint is_open = False, close
    if policy == TRUE_COUNT:
        need = max(1, <long>param)
    starts_arr = np.empty(n, dtype=np.int64)
    ends_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] starts = starts_arr
    cdef long long[::1] ends = ends_arr
    for i in range(n):
        if p[i] != r[i]:
            if not is_open:
                is_open = True
                start = i
                n_true = 0
                n_false = 0
            n_false += 1
            run_true = 0
            last_bad = i
            continue
        if not is_open:
            continue
        n_true += 1
        run_true += 1
        if policy == FIRST_MATCH:
            close = True
        elif policy == TRUE_COUNT:
            close = run_true >= need
        else:
            close = (<double>n_true) / (n_true + n_false) > param
        if close:
            starts[count] = start
            ends[count] = last_bad + 1
            count += 1
            is_open = False
    if is_open:
        starts[count] = start
        ends[count] = last_bad + 1
        count += 1
    return starts_arr[:count].copy(), ends_arr[:count].copy()


def lz76(bits):
    cdef const unsigned char[::1] s = np.ascontiguousarray(bits, dtype=np.uint8).ravel()
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t c = 1, l = 1, i = 0, k = 1, k_max = 1
    if n < 2:
        return n
    while True:
        if s[i + k - 1] == s[l + k - 1]:
            k += 1
            if l + k > n:
                c += 1
                break
        else:
            if k > k_max:
                k_max = k
            i += 1
            if i == l:
                c += 1
                l += k_max
                if l + 1 > n:
                    break
                i = 0
                k = 1
                k_max = 1
            else:
                k = 1
    return c
