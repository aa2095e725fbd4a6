# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched R^2 kernel for the shuffle-refit loop."""
import numpy as np
cimport numpy as cnp


def batched_r2(cnp.ndarray[double, ndim=2] design,
               cnp.ndarray[double, ndim=2] solver,
               cnp.ndarray[double, ndim=2] targets):
    """Same contract as the numpy fallback: R^2 per target row.

    design (5, T), solver (5, T) = (H H^T + lam I)^{-1} H, targets (m, T).
    """
    cdef Py_ssize_t m = targets.shape[0]
    cdef Py_ssize_t T = targets.shape[1]
    cdef Py_ssize_t K = design.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(m)
    cdef double[:, :] H = np.ascontiguousarray(design)
    cdef double[:, :] M = np.ascontiguousarray(solver)
    cdef double[:, :] Y = np.ascontiguousarray(targets, dtype=np.float64)
    cdef double[:] res = out
    cdef double beta[8]
    cdef Py_ssize_t i, k, t
    cdef double acc, yhat, r, rss, tss, mean

    if K > 8:
        raise ValueError("kernel supports at most 8 basis functions")

    with nogil:
        for i in range(m):
            for k in range(K):
                acc = 0.0
                for t in range(T):
                    acc += M[k, t] * Y[i, t]
                beta[k] = acc
            mean = 0.0
            for t in range(T):
                mean += Y[i, t]
            mean /= T
            rss = 0.0
            tss = 0.0
            for t in range(T):
                yhat = 0.0
                for k in range(K):
                    yhat += beta[k] * H[k, t]
                r = Y[i, t] - yhat
                rss += r * r
                r = Y[i, t] - mean
                tss += r * r
            if tss > 0.0:
                res[i] = 1.0 - rss / tss
            else:
                res[i] = 0.0
    return out
