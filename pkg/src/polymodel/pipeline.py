"""Glue between the pipeline stages, shared by the CLI and the test suite."""
from __future__ import annotations

import numpy as np

from .backtest import (PerformanceReport, Strategy, TradeLogEntry,
                       benchmark_report, run_backtest)
from .config import RunConfig
from .errors import ConfigError
from .features import FeatureConfig, FeatureFrame, build_feature_frames
from .itf import (ModelConfig, NormStats, Params, SampleTensor, TrainSchedule,
                  TrendForecast, apply_norm, build_dataset, fit_norm_stats,
                  predict_panel, train)
from .panel import (MonthIndex, ReturnPanel, SeriesId, SeriesKind, benchmark,
                    load_panel)
from .significance import ShuffleConfig


def feature_config(cfg: RunConfig) -> FeatureConfig:
    return FeatureConfig(
        window_len=cfg.window_len,
        lam=cfg.ridge_lambda,
        shuffle=ShuffleConfig(n_shuffles=cfg.n_shuffles, seed=cfg.seed,
                              pvalue_threshold_score=cfg.score_threshold),
        kappa=cfg.kappa, gamma=cfg.gamma, xi=cfg.xi,
        benchmark=benchmark(cfg.benchmark_id) if cfg.benchmark_id else None,
        threads=cfg.threads,
    )


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(lookback=cfg.lookback, d_model=cfg.d_model,
                       n_heads=cfg.n_heads, n_blocks=cfg.n_blocks)


def load_run_panel(cfg: RunConfig) -> ReturnPanel:
    if not cfg.returns_path:
        raise ConfigError("returns_path is required")
    return load_panel(cfg.returns_path, cfg.aum_path or None,
                      cfg.volume_path or None)


def feature_months(panel: ReturnPanel, window_len: int) -> list[MonthIndex]:
    return [m for i, m in enumerate(panel.calendar) if i >= window_len - 1]


def compute_features(panel: ReturnPanel, cfg: RunConfig,
                     score_sink: list | None = None) -> list[FeatureFrame]:
    funds = panel.ids(SeriesKind.FUND)
    factors = panel.ids(SeriesKind.FACTOR)
    months = feature_months(panel, cfg.window_len)
    return build_feature_frames(panel, funds, factors, months,
                                feature_config(cfg), score_sink=score_sink)


def next_return_lookup(panel: ReturnPanel):
    def lookup(fund_id: SeriesId, month: MonthIndex) -> float | None:
        nxt = month.shift(1)
        try:
            pos = panel.month_pos(nxt)
        except KeyError:
            return None
        v = panel.series[fund_id][pos]
        return None if np.isnan(v) else float(v)
    return lookup


def chronological_split(samples: list[tuple[SeriesId, MonthIndex, SampleTensor]],
                        train_split: float
                        ) -> tuple[list, list, MonthIndex]:
    """Split sample months chronologically; returns (train, eval, boundary).
    Training months are <= boundary, evaluation months strictly after."""
    if not samples:
        raise ValueError("no samples to split")
    months = sorted({m.ordinal() for _, m, _ in samples})
    cut = max(1, int(round(train_split * len(months))))
    boundary = MonthIndex.from_ordinal(months[min(cut, len(months)) - 1])
    train_set = [s for s in samples if s[1] <= boundary]
    eval_set = [s for s in samples if s[1] > boundary]
    return train_set, eval_set, boundary


def train_model(frames: list[FeatureFrame], panel: ReturnPanel,
                cfg: RunConfig):
    """Returns (params, trace, norm stats, model config, boundary month)."""
    mcfg = model_config(cfg)
    samples = build_dataset(frames, next_return_lookup(panel), mcfg, cfg.tau)
    train_set, eval_set, boundary = chronological_split(samples,
                                                       cfg.train_split)
    stats = fit_norm_stats([s for _, _, s in train_set])
    train_samples = [apply_norm(s, stats) for _, _, s in train_set]
    eval_samples = [apply_norm(s, stats) for _, _, s in eval_set]
    from .itf import init_params

    params = init_params(mcfg, seed=cfg.seed)
    schedule = TrainSchedule(epochs=cfg.epochs, batch_size=cfg.batch_size,
                             learning_rate=cfg.learning_rate,
                             momentum=cfg.momentum, seed=cfg.seed)
    params, trace = train(train_samples, params, mcfg, schedule,
                          eval_set=eval_samples or None)
    return params, trace, stats, mcfg, boundary


def forecast_months(frames: list[FeatureFrame], panel: ReturnPanel,
                    cfg: RunConfig, boundary: MonthIndex) -> list[MonthIndex]:
    """Months strictly after the training boundary at which forecasts feed a
    rebalance of the following calendar month."""
    months = sorted({fr.month for fr in frames if fr.valid})
    last = panel.calendar[-1]
    return [m for m in months if m > boundary and m < last]


def build_forecasts(frames: list[FeatureFrame], panel: ReturnPanel,
                    params: Params, mcfg: ModelConfig, stats: NormStats,
                    months: list[MonthIndex]
                    ) -> dict[MonthIndex, list[TrendForecast]]:
    """Forecasts keyed by the rebalance month they feed (forecast month + 1)."""
    out: dict[MonthIndex, list[TrendForecast]] = {}
    for m in months:
        forecasts, _ = predict_panel(frames, params, mcfg, stats, m)
        if forecasts:
            out[m.shift(1)] = forecasts
    return out


def run_strategies(panel: ReturnPanel,
                   forecasts_by_month: dict[MonthIndex, list[TrendForecast]],
                   cfg: RunConfig
                   ) -> tuple[dict[str, PerformanceReport],
                              dict[str, list[TradeLogEntry]]]:
    if not forecasts_by_month:
        raise ConfigError("no rebalance months with forecasts")
    keys = sorted(forecasts_by_month)
    start, end = keys[0], keys[-1]
    reports: dict[str, PerformanceReport] = {}
    trades: dict[str, list[TradeLogEntry]] = {}
    for name in cfg.strategy_list():
        rep, tr = run_backtest(panel, forecasts_by_month, Strategy[name],
                               start, end)
        reports[name] = rep
        trades[name] = tr
    if cfg.benchmark_id:
        sid = benchmark(cfg.benchmark_id)
        if sid in panel.series:
            reports[f"benchmark:{cfg.benchmark_id}"] = benchmark_report(
                panel, sid, start, end)
    return reports, trades
