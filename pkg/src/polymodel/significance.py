"""Target-shuffling significance engine: P-Value Scores and relevant factors.

For each (fund, factor, window) the target row is permuted N times with the
factor order fixed; refitting each permutation yields a null population of
R^2 values. The add-one smoothed p-value (1 + exceedances) / (N + 1) bounds
the score at ln(N + 1) and keeps -log finite.
"""
from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log

import numpy as np

from .hermite import build_design, fit_pair
from .kernels import batched_r2
from .panel import Incomplete, MonthIndex, ReturnPanel, SeriesId, extract_window

N_COEF = 5


@dataclass(frozen=True)
class ShuffleConfig:
    n_shuffles: int = 200
    seed: int = 0
    pvalue_threshold_score: float = 3.0

    def __post_init__(self):
        if self.n_shuffles < 100:
            raise ValueError("n_shuffles must be >= 100")
        if self.pvalue_threshold_score <= 0:
            raise ValueError("threshold score must be > 0")


@dataclass(frozen=True)
class SignificanceResult:
    r2_observed: float
    p_value: float
    score: float
    n_shuffles: int
    degenerate: bool = False


def _permutation(seed: int, pair_key: str, index: int, length: int) -> np.ndarray:
    """Fisher-Yates permutation from an RNG keyed by (seed, pair, index)."""
    digest = hashlib.blake2b(
        f"{seed}|{pair_key}|{index}".encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.permutation(length)


def shuffle_test(y: np.ndarray, factor_row: np.ndarray, lam: float,
                 config: ShuffleConfig, pair_key: str) -> SignificanceResult:
    """Significance of the observed R^2 against the shuffled-target null."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(factor_row, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValueError("target and factor rows must be equal-length 1-d")
    n = config.n_shuffles

    fit = fit_pair(y, x, lam)
    if fit.degenerate:
        return SignificanceResult(r2_observed=0.0, p_value=1.0, score=0.0,
                                  n_shuffles=n, degenerate=True)

    z = (x - fit.factor_affine[0]) / fit.factor_affine[1]
    design = build_design(z)
    gram = design @ design.T
    gram[np.diag_indices_from(gram)] += lam
    solver = np.linalg.solve(gram, design)

    perms = np.empty((n, len(y)), dtype=np.intp)
    for i in range(n):
        perms[i] = _permutation(config.seed, pair_key, i, len(y))
    r2_null = batched_r2(design, solver, y[perms])

    exceed = int(np.sum(r2_null >= fit.r2))
    p_value = (1 + exceed) / (n + 1)
    return SignificanceResult(r2_observed=fit.r2, p_value=p_value,
                              score=-log(p_value), n_shuffles=n)


@dataclass
class ScoreMatrix:
    end: MonthIndex
    window_len: int
    results: dict[tuple[SeriesId, SeriesId], SignificanceResult]
    omitted: int


def pair_key(target: SeriesId, factor_id: SeriesId, end: MonthIndex) -> str:
    return f"{target}|{factor_id}|{end}"


def score_matrix(panel: ReturnPanel, funds: list[SeriesId],
                 factors: list[SeriesId], end: MonthIndex, window_len: int,
                 lam: float, config: ShuffleConfig,
                 threads: int = 1) -> ScoreMatrix:
    """One SignificanceResult per (fund, factor) pair with complete windows.

    Incomplete pairs are omitted and counted. Results are deterministic and
    independent of thread count: each pair's RNG stream is keyed by the pair.
    """
    tasks = []
    omitted = 0
    for f in sorted(funds):
        for x in sorted(factors):
            win = extract_window(panel, f, x, end, window_len)
            if isinstance(win, Incomplete):
                omitted += 1
                continue
            tasks.append((f, x, win))

    def run(task):
        f, x, (y_row, x_row) = task
        return (f, x), shuffle_test(y_row, x_row, lam, config,
                                    pair_key(f, x, end))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(run, tasks))
    else:
        pairs = [run(t) for t in tasks]
    return ScoreMatrix(end=end, window_len=window_len,
                       results=dict(sorted(pairs)), omitted=omitted)


def relevant_factors(scores: dict[SeriesId, SignificanceResult],
                     threshold_score: float) -> list[SeriesId]:
    """Factors with score strictly above the threshold, best first.

    Degenerate results never qualify. Ties break by factor id.
    """
    if not scores:
        raise ValueError("scores must be nonempty")
    hits = [(res.score, fid) for fid, res in scores.items()
            if not res.degenerate and res.score > threshold_score]
    hits.sort(key=lambda item: (-item[0], item[1].id))
    return [fid for _, fid in hits]


def export_scores(matrices: ScoreMatrix | list[ScoreMatrix], path) -> None:
    if isinstance(matrices, ScoreMatrix):
        matrices = [matrices]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fund_id", "factor_id", "window_end", "r2", "p_value",
                    "score"])
        for matrix in sorted(matrices, key=lambda m: m.end):
            for (f, x), res in sorted(matrix.results.items()):
                w.writerow([f.id, x.id, str(matrix.end),
                            repr(res.r2_observed), repr(res.p_value),
                            repr(res.score)])
