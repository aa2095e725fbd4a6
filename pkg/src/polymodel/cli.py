"""Command-line entry point: synth, features, train, backtest, report.

Exit codes: 0 success, 2 usage/input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import backtest as bt
from . import pipeline
from .config import RunConfig, echo_config, parse_config
from .errors import ConfigError, NumericalError, PolyModelError
from .features import export_features, load_features
from .itf import load_checkpoint, save_checkpoint, write_trace_csv
from .panel import write_panel_csvs
from .significance import export_scores
from .synth import generate, spec_from_json

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig(raw_text="")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def cmd_synth(args) -> int:
    spec = spec_from_json(args.spec)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = generate(spec)
    write_panel_csvs(panel, out / "returns.csv", out / "aum.csv",
                     out / "volume.csv")
    truth.to_json(out / "ground_truth.json")
    print(f"wrote panel with {len(panel.series)} series to {out}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    echo_config(cfg, out)
    panel = pipeline.load_run_panel(cfg)
    matrices: list = []
    frames = pipeline.compute_features(panel, cfg, score_sink=matrices)
    export_features(frames, out / "features.csv")
    export_scores(matrices, out / "scores.csv")
    n_valid = sum(fr.valid for fr in frames)
    print(f"wrote {len(frames)} frames ({n_valid} valid) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    echo_config(cfg, out)
    panel = pipeline.load_run_panel(cfg)
    features_path = out / "features.csv"
    if not features_path.exists():
        raise ConfigError(f"{features_path} not found; run features first")
    frames = load_features(features_path)
    params, trace, stats, mcfg, boundary = pipeline.train_model(
        frames, panel, cfg)
    save_checkpoint(out / "checkpoint.npz", params, mcfg, stats)
    write_trace_csv(trace, out / "loss_trace.csv")
    print(f"trained through {boundary}; checkpoint in {out}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    echo_config(cfg, out)
    panel = pipeline.load_run_panel(cfg)
    features_path = out / "features.csv"
    checkpoint_path = Path(args.checkpoint) if args.checkpoint \
        else out / "checkpoint.npz"
    for path in (features_path, checkpoint_path):
        if not Path(path).exists():
            raise ConfigError(f"{path} not found")
    frames = load_features(features_path)
    params, mcfg, stats = load_checkpoint(checkpoint_path)
    samples = pipeline.build_dataset(
        frames, pipeline.next_return_lookup(panel), mcfg, cfg.tau)
    _, _, boundary = pipeline.chronological_split(samples, cfg.train_split)
    months = pipeline.forecast_months(frames, panel, cfg, boundary)
    forecasts = pipeline.build_forecasts(frames, panel, params, mcfg, stats,
                                         months)
    reports, trades = pipeline.run_strategies(panel, forecasts, cfg)
    bt.write_curve_csv(out / "curve.csv", reports)
    bt.write_stats_json(out / "stats.json", reports)
    bt.write_trades_csv(out / "trades.csv", trades)
    for name in sorted(reports):
        print(f"{name}: final value {reports[name].curve[-1]:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or "out")
    stats_path = out / "stats.json"
    if not stats_path.exists():
        raise ConfigError(f"{stats_path} not found; run backtest first")
    with open(stats_path, encoding="utf-8") as fh:
        stats = json.load(fh)
    summary_path = out / "summary.csv"
    columns = ["strategy", "final_value", "annualized_return",
               "annualized_volatility", "sharpe", "max_drawdown"]
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for name in sorted(stats):
            rec = stats[name]
            w.writerow([name] + [rec[c] if rec[c] is not None else ""
                                 for c in columns[1:]])
    print(summary_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polymodel",
        description="PolyModel features, trend classifier, and backtester")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic panel")
    p_synth.add_argument("--spec", required=True, help="synth spec JSON")
    p_synth.add_argument("--out", default=None)
    p_synth.set_defaults(func=cmd_synth)

    for name, func in (("features", cmd_features), ("train", cmd_train)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=func)

    p_bt = sub.add_parser("backtest")
    common(p_bt)
    p_bt.add_argument("--checkpoint", default=None)
    p_bt.set_defaults(func=cmd_backtest)

    p_rep = sub.add_parser("report")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PolyModelError, OSError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
