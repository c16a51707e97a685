# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled triplet hinge scatter; see ``xmodal.kernels`` for the contract."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def hinge_scatter(const double[:, ::1] D, const cnp.int64_t[:, ::1] triplets, double margin):
    cdef Py_ssize_t n = triplets.shape[0]
    cdef Py_ssize_t rows = D.shape[0]
    cdef Py_ssize_t cols = D.shape[1]
    cdef Py_ssize_t t, a, p, q
    cdef double v
    cdef long n_active = 0
    h_arr = np.zeros(n, dtype=np.float64)
    G_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[::1] h = h_arr
    cdef double[:, ::1] G = G_arr
    with nogil:
        for t in range(n):
            a = triplets[t, 0]
            p = triplets[t, 1]
            q = triplets[t, 2]
            v = margin + D[a, p] - D[a, q]
            if v > 0.0:
                h[t] = v
                G[a, p] += 1.0
                G[a, q] -= 1.0
                n_active += 1
    return h_arr, G_arr, n_active
