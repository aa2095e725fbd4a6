"""Degree-4 probabilists'-Hermite ridge regression for one (target, factor) pair.

The factor row is z-scored before basis evaluation; the fitted object carries
the affine parameters so prediction accepts raw factor values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularDesignError
from .panel import standardize

DEGREE = 4
N_COEF = DEGREE + 1

# Monomial coefficients of He_0..He_4 (probabilists' convention), low -> high.
_HERMITE_COEFS = (
    (1.0,),
    (0.0, 1.0),
    (-1.0, 0.0, 1.0),
    (0.0, -3.0, 0.0, 1.0),
    (3.0, 0.0, -6.0, 0.0, 1.0),
)


def hermite_basis(x: float, k: int) -> float:
    """He_k(x) for k in 0..4: 1, x, x^2-1, x^3-3x, x^4-6x^2+3."""
    if not 0 <= k <= DEGREE:
        raise ValueError(f"degree must be in 0..{DEGREE}, got {k}")
    return float(np.polynomial.polynomial.polyval(x, _HERMITE_COEFS[k]))


def build_design(factor_row: np.ndarray) -> np.ndarray:
    """5 x T matrix; column t holds (He_0..He_4) of the standardized value x_t."""
    x = np.asarray(factor_row, dtype=float)
    if x.ndim != 1:
        raise ValueError("factor row must be 1-d")
    if np.isnan(x).any():
        raise ValueError("factor row must be complete")
    x2 = x * x
    return np.vstack([
        np.ones_like(x),
        x,
        x2 - 1.0,
        x * (x2 - 3.0),
        x2 * (x2 - 6.0) + 3.0,
    ])


@dataclass(frozen=True)
class PolyFit:
    """Fitted ridge coefficients plus fit statistics for one window."""

    beta: np.ndarray            # length 5
    lam: float
    r2: float
    adj_r2: float
    residual_var: float         # RSS / (n - p), p = 5
    n: int
    factor_affine: tuple[float, float]  # (mean, sd) of the raw factor window
    degenerate: bool = False    # constant target window (TSS = 0)


def _solve(design: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve (H H^T + lam I) beta = H rhs; rhs may be (T,) or (T, m)."""
    gram = design @ design.T
    gram[np.diag_indices_from(gram)] += lam
    if lam == 0.0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularDesignError(
                f"normal equations singular at lambda=0 (cond={cond:.3g})")
    try:
        return np.linalg.solve(gram, design @ rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(str(exc)) from exc


def fit_ridge(design: np.ndarray, y: np.ndarray, lam: float,
              factor_affine: tuple[float, float] = (0.0, 1.0)) -> PolyFit:
    """Ridge estimate of the 5 basis coefficients with fit statistics.

    r2 follows the usual 1 - RSS/TSS with a constant-target window reported
    as r2 = adj_r2 = 0 and flagged degenerate.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if design.shape != (N_COEF, n):
        raise ValueError(f"design shape {design.shape} mismatches y length {n}")
    if n <= N_COEF:
        raise ValueError(f"need more than {N_COEF} observations, got {n}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")

    beta = _solve(design, y, lam)
    resid = y - design.T @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    residual_var = rss / (n - N_COEF)
    if tss == 0.0 or np.ptp(y) == 0.0:
        return PolyFit(beta=beta, lam=lam, r2=0.0, adj_r2=0.0,
                       residual_var=residual_var, n=n,
                       factor_affine=factor_affine, degenerate=True)
    r2 = 1.0 - rss / tss
    adj_r2 = 1.0 - (rss / (n - N_COEF)) / (tss / (n - 1))
    return PolyFit(beta=beta, lam=lam, r2=r2, adj_r2=adj_r2,
                   residual_var=residual_var, n=n, factor_affine=factor_affine)


def fit_pair(y: np.ndarray, factor_row: np.ndarray, lam: float) -> PolyFit:
    """Standardize the factor window, build the design, and fit."""
    z, mean, sd = standardize(np.asarray(factor_row, dtype=float))
    return fit_ridge(build_design(z), y, lam, factor_affine=(mean, sd))


def predict(fit: PolyFit, factor_value_raw: float) -> float:
    """Evaluate the fitted polynomial at a raw (unstandardized) factor value."""
    mean, sd = fit.factor_affine
    z = (np.asarray(factor_value_raw, dtype=float) - mean) / sd
    out = sum(b * np.polynomial.polynomial.polyval(z, c)
              for b, c in zip(fit.beta, _HERMITE_COEFS))
    return float(out) if np.isscalar(factor_value_raw) else np.asarray(out)


def decompose(fit: PolyFit, design: np.ndarray, y: np.ndarray
              ) -> tuple[float, float, float]:
    """(TSS, ESS, RSS). TSS = RSS + ESS holds only for the lam = 0 fit."""
    y = np.asarray(y, dtype=float)
    yhat = design.T @ fit.beta
    ybar = y.mean()
    tss = float(np.sum((y - ybar) ** 2))
    ess = float(np.sum((yhat - ybar) ** 2))
    rss = float(np.sum((y - yhat) ** 2))
    return tss, ess, rss
