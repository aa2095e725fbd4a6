"""Numpy fallback for the batched R^2 kernel."""
import numpy as np


def batched_r2(design: np.ndarray, solver: np.ndarray, targets: np.ndarray
               ) -> np.ndarray:
    """R^2 of the ridge fit for each target row against a fixed design.

    design : (5, T) basis evaluations.
    solver : (5, T) matrix mapping a target row to its coefficient vector,
             i.e. (H H^T + lam I)^{-1} H, precomputed once per pair.
    targets: (m, T) rows to fit (the observed y and its permutations).

    Rows with zero total sum of squares get R^2 = 0.
    """
    targets = np.ascontiguousarray(targets, dtype=float)
    beta = targets @ solver.T                      # (m, 5)
    resid = targets - beta @ design                # (m, T)
    rss = np.einsum("ij,ij->i", resid, resid)
    centered = targets - targets.mean(axis=1, keepdims=True)
    tss = np.einsum("ij,ij->i", centered, centered)
    out = np.zeros(len(targets))
    nz = tss > 0.0
    out[nz] = 1.0 - rss[nz] / tss[nz]
    return out
