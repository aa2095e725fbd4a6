"""Per-fund feature construction: Sharpe, MRaR, StressVaR, LTA, LTR, LTS.

Fits use a 36-month rolling window; factor quantile grids use the full
ingested history up to the evaluation month (expanding window).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import isnan, sqrt

import numpy as np

from .errors import (DegenerateGridError, DomainError, InsufficientHistoryError,
                     NoRelevantFactorsError, ZeroVolatilityError)
from .hermite import PolyFit, fit_pair, predict
from .panel import Incomplete, MonthIndex, ReturnPanel, SeriesId, extract_row
from .significance import ShuffleConfig, relevant_factors, score_matrix

QUANTILE_LEVELS = (0.01, 0.16, 0.50, 0.84, 0.99)
DEFAULT_XI = 2.33  # as printed; the analytically consistent Phi^-1(0.98) ~ 2.054


def sharpe_ratio(returns: np.ndarray, benchmark_row: np.ndarray | None = None
                 ) -> float:
    """Monthly Sharpe ratio of excess returns (n-1 denominator), unannualized."""
    r = np.asarray(returns, dtype=float)
    if len(r) < 12:
        raise ValueError("need at least 12 months")
    excess = r if benchmark_row is None else r - np.asarray(benchmark_row, float)
    sd = float(excess.std(ddof=1))
    if sd == 0.0 or np.ptp(excess) == 0.0:
        raise ZeroVolatilityError("excess returns have zero variance")
    return float(excess.mean()) / sd


def mrar(returns: np.ndarray, benchmark_row: np.ndarray | None = None,
         gamma: float = 2.0) -> float:
    """Morningstar risk-adjusted return over the sample period.

    Geometric excess returns r_G = (1+r)/(1+r_f) - 1, then the power-utility
    certainty equivalent (mean((1+r_G)^-gamma))^(-n/gamma) - 1.
    """
    r = np.asarray(returns, dtype=float)
    n = len(r)
    if n < 12:
        raise ValueError("need at least 12 months")
    if gamma <= 0:
        raise DomainError("gamma must be > 0")
    rf = np.zeros(n) if benchmark_row is None else np.asarray(benchmark_row, float)
    growth = (1.0 + r) / (1.0 + rf)
    if np.any(growth <= 0.0):
        raise DomainError("geometric excess growth factor <= 0")
    mean_util = float(np.mean(growth ** (-gamma)))
    return mean_util ** (-n / gamma) - 1.0


@dataclass(frozen=True)
class QuantileGrid:
    """Factor-return quantiles at the five LTA probability levels."""

    theta: np.ndarray                 # values at QUANTILE_LEVELS, non-decreasing
    tail_fitted: tuple[bool, bool]    # (lower 1%, upper 99%) from the GPD fit
    degenerate: bool = False


def _gpd_tail_quantile(history: np.ndarray, tail_prob: float,
                       anchor_prob: float = 0.10) -> float | None:
    """Upper-tail quantile P(X > q) = tail_prob via a method-of-moments GPD
    fit to exceedances past the empirical (1 - anchor_prob) percentile.
    Returns None when the fit is not viable (then use the empirical quantile).
    """
    x = np.asarray(history, dtype=float)
    u = float(np.quantile(x, 1.0 - anchor_prob))
    exceed = x[x > u] - u
    if len(exceed) < 10:
        return None
    m = float(exceed.mean())
    s2 = float(exceed.var(ddof=1))
    if s2 <= 0.0 or m <= 0.0:
        return None
    ratio_ms = m * m / s2
    shape = 0.5 * (1.0 - ratio_ms)
    scale = 0.5 * m * (ratio_ms + 1.0)
    if scale <= 0.0:
        return None
    p_u = len(exceed) / len(x)
    frac = tail_prob / p_u
    if abs(shape) < 1e-12:
        return u - scale * np.log(frac)
    return u + scale / shape * (frac ** (-shape) - 1.0)


def factor_quantiles(factor_history: np.ndarray, tail_fraction: float = 0.10
                     ) -> QuantileGrid:
    """Quantile grid for one factor's long history.

    16/50/84 are empirical (linear interpolation). The 1 and 99 levels come
    from a generalized Pareto tail fit when the history has >= 60 points and
    enough exceedances; otherwise they fall back to empirical quantiles.
    """
    x = np.asarray(factor_history, dtype=float)
    x = x[~np.isnan(x)]
    if len(x) < 20:
        raise InsufficientHistoryError(
            f"need >= 20 observations, got {len(x)}")
    q16, q50, q84 = (float(v) for v in np.quantile(x, [0.16, 0.50, 0.84]))
    q01 = float(np.quantile(x, 0.01))
    q99 = float(np.quantile(x, 0.99))
    lo_fitted = hi_fitted = False
    if len(x) >= 60:
        hi = _gpd_tail_quantile(x, 0.01, tail_fraction)
        if hi is not None:
            q99, hi_fitted = hi, True
        lo = _gpd_tail_quantile(-x, 0.01, tail_fraction)
        if lo is not None:
            q01, lo_fitted = -lo, True
    # tail fits may not cross the inner empirical quantiles
    q99 = max(q99, q84)
    q01 = min(q01, q16)
    theta = np.array([q01, q16, q50, q84, q99])
    return QuantileGrid(theta=theta, tail_fitted=(lo_fitted, hi_fitted),
                        degenerate=bool(np.all(theta == theta[0])))


@dataclass(frozen=True)
class LtaWeights:
    w: np.ndarray  # five weights; sum 1 and sum(w * theta) = factor mean


def _lagrange_base_weights() -> np.ndarray:
    """Integral over [0, 1] of each Lagrange basis polynomial on the
    probability nodes; these sum to 1 since the basis sums to the constant 1."""
    nodes = np.array(QUANTILE_LEVELS)
    out = np.empty(len(nodes))
    for k in range(len(nodes)):
        others = np.delete(nodes, k)
        poly = np.polynomial.Polynomial.fromroots(others)
        poly = poly / np.prod(nodes[k] - others)
        integ = poly.integ()
        out[k] = integ(1.0) - integ(0.0)
    return out


_BASE_WEIGHTS = _lagrange_base_weights()


def lta_weights(grid: QuantileGrid, factor_mean: float) -> LtaWeights:
    """Quadrature weights: Lagrange base weights plus the minimal-norm
    correction enforcing sum(w) = 1 and sum(w * theta) = factor_mean."""
    if grid.degenerate:
        raise DegenerateGridError("all quantile values equal")
    theta = grid.theta
    w0 = _BASE_WEIGHTS.copy()
    constraints = np.vstack([np.ones(5), theta])
    targets = np.array([1.0, factor_mean])
    gap = targets - constraints @ w0
    correction = constraints.T @ np.linalg.solve(
        constraints @ constraints.T, gap)
    return LtaWeights(w=w0 + correction)


def stress_var(fits: dict[SeriesId, PolyFit],
               percentile_grids: dict[SeriesId, np.ndarray],
               xi: float = DEFAULT_XI
               ) -> tuple[float, SeriesId, dict[SeriesId, float]]:
    """StressVaR: worst-case predicted loss over the 1..99 integer percentiles
    of each relevant factor, combined with residual uncertainty.

    Returns (svar, worst factor, per-factor svar table).
    """
    if not fits:
        raise NoRelevantFactorsError("empty relevant-factor set")
    per_factor: dict[SeriesId, float] = {}
    for fid in sorted(fits):
        preds = predict(fits[fid], percentile_grids[fid])
        y_max = max(0.0, -float(np.min(preds)))
        xi_term = xi * sqrt(fits[fid].residual_var)
        if y_max == 0.0:
            value = xi_term
        elif xi_term == 0.0:
            value = y_max
        else:
            # the max() guards the dominance invariant against sqrt rounding
            value = max(sqrt(y_max ** 2 + fits[fid].residual_var * xi ** 2),
                        y_max, xi_term)
        per_factor[fid] = value
    worst = max(sorted(per_factor), key=lambda fid: per_factor[fid])
    return per_factor[worst], worst, per_factor


def long_term_alpha(fits: dict[SeriesId, PolyFit],
                    grids: dict[SeriesId, QuantileGrid],
                    weights: dict[SeriesId, LtaWeights]) -> float:
    """Median over relevant factors of sum_q w_q * Phi(theta_q)."""
    if not fits:
        raise NoRelevantFactorsError("empty relevant-factor set")
    per_factor = []
    for fid in sorted(fits):
        preds = predict(fits[fid], grids[fid].theta)
        per_factor.append(float(np.dot(weights[fid].w, preds)))
    return float(np.median(per_factor))


def long_term_ratio(lta: float, svar: float) -> float:
    if svar <= 0.0:
        raise ZeroVolatilityError("SVaR must be > 0 for LTR")
    return lta / svar


def long_term_stability(lta: float, svar: float, kappa: float = 0.05) -> float:
    return lta - kappa * svar


@dataclass(frozen=True)
class FeatureConfig:
    window_len: int = 36
    lam: float = 1e-4
    shuffle: ShuffleConfig = field(default_factory=ShuffleConfig)
    kappa: float = 0.05
    gamma: float = 2.0
    xi: float = DEFAULT_XI
    benchmark: SeriesId | None = None
    threads: int = 1


@dataclass
class FeatureFrame:
    fund: SeriesId
    month: MonthIndex
    sharpe: float = float("nan")
    mrar: float = float("nan")
    svar: float = float("nan")
    lta: float = float("nan")
    ltr: float = float("nan")
    lts: float = float("nan")
    aum: float = float("nan")
    volume: float = float("nan")
    trailing_return: float = float("nan")
    valid: bool = False
    reason: str = ""

    def numeric_vector(self) -> np.ndarray:
        return np.array([self.sharpe, self.mrar, self.svar, self.lta,
                         self.ltr, self.lts, self.aum, self.volume,
                         self.trailing_return])


FEATURE_NAMES = ("sharpe", "mrar", "svar", "lta", "ltr", "lts", "aum",
                 "volume", "trailing_return")


def _side_value(table: dict[SeriesId, np.ndarray], sid: SeriesId,
                pos: int) -> float:
    row = table.get(sid)
    return float(row[pos]) if row is not None else float("nan")


def build_feature_frames(panel: ReturnPanel, funds: list[SeriesId],
                         factors: list[SeriesId], months: list[MonthIndex],
                         config: FeatureConfig,
                         score_sink: list | None = None) -> list[FeatureFrame]:
    """One frame per (fund, month); incomplete or degenerate cells are
    emitted invalid with a reason code. Deterministic for a fixed config.

    When score_sink is a list, every per-month ScoreMatrix is appended to it
    (for CSV export by the CLI).
    """
    frames: list[FeatureFrame] = []
    for month in sorted(months):
        end_pos = panel.month_pos(month)

        histories: dict[SeriesId, np.ndarray] = {}
        pct_grids: dict[SeriesId, np.ndarray] = {}
        q_grids: dict[SeriesId, QuantileGrid] = {}
        q_weights: dict[SeriesId, LtaWeights] = {}
        for fid in factors:
            hist = panel.series[fid][: end_pos + 1]
            hist = hist[~np.isnan(hist)]
            histories[fid] = hist
            if len(hist) >= 20:
                pct_grids[fid] = np.percentile(hist, np.arange(1, 100))
                grid = factor_quantiles(hist)
                if not grid.degenerate:
                    q_grids[fid] = grid
                    q_weights[fid] = lta_weights(grid, float(hist.mean()))

        matrix = score_matrix(panel, funds, factors, month, config.window_len,
                              config.lam, config.shuffle,
                              threads=config.threads)
        if score_sink is not None:
            score_sink.append(matrix)

        bench_row = None
        if config.benchmark is not None:
            bench = extract_row(panel, config.benchmark, month,
                                config.window_len)
            bench_row = None if isinstance(bench, Incomplete) else bench

        for f in sorted(funds):
            frame = FeatureFrame(fund=f, month=month)
            frame.aum = _side_value(panel.aum, f, end_pos)
            frame.volume = _side_value(panel.volume, f, end_pos)
            frames.append(frame)

            y = extract_row(panel, f, month, config.window_len)
            if isinstance(y, Incomplete):
                frame.reason = "IncompleteWindow"
                continue
            frame.trailing_return = float(y[-1])

            try:
                frame.sharpe = sharpe_ratio(y, bench_row)
                frame.mrar = mrar(y, bench_row, config.gamma)
            except (ZeroVolatilityError, DomainError) as exc:
                frame.reason = type(exc).__name__.removesuffix("Error")
                continue

            fund_scores = {x: res for (ff, x), res in matrix.results.items()
                           if ff == f}
            if not fund_scores:
                frame.reason = "NoScoredFactors"
                continue
            gamma_set = [x for x in relevant_factors(
                fund_scores, config.shuffle.pvalue_threshold_score)
                if x in q_grids and x in pct_grids]
            if not gamma_set:
                frame.reason = "NoRelevantFactors"
                continue

            fits = {}
            for x in gamma_set:
                x_row = extract_row(panel, x, month, config.window_len)
                fits[x] = fit_pair(y, x_row, config.lam)
            svar, _, _ = stress_var(fits, pct_grids, config.xi)
            lta = long_term_alpha(fits, q_grids, q_weights)
            if svar <= 0.0:
                frame.reason = "ZeroSVaR"
                frame.svar, frame.lta = svar, lta
                continue
            frame.svar = svar
            frame.lta = lta
            frame.ltr = long_term_ratio(lta, svar)
            frame.lts = long_term_stability(lta, svar, config.kappa)
            frame.valid = True
    return frames


def load_features(path) -> list[FeatureFrame]:
    """Read back a CSV written by export_features."""
    from .panel import fund as fund_id

    frames: list[FeatureFrame] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            fr = FeatureFrame(fund=fund_id(rec["fund_id"]),
                              month=MonthIndex.parse(rec["month"]))
            for name in FEATURE_NAMES:
                setattr(fr, name,
                        float(rec[name]) if rec[name] else float("nan"))
            fr.valid = rec["valid"] == "1"
            fr.reason = rec["reason"]
            frames.append(fr)
    return frames


def export_features(frames: list[FeatureFrame], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fund_id", "month", *FEATURE_NAMES, "valid", "reason"])
        for fr in sorted(frames, key=lambda fr: (fr.fund, fr.month)):
            vals = [("" if isnan(v) else repr(float(v)))
                    for v in fr.numeric_vector()]
            w.writerow([fr.fund.id, str(fr.month), *vals,
                        int(fr.valid), fr.reason])
