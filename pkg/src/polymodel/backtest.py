"""Monthly-rebalanced portfolio simulator: SA and WA strategies plus metrics.

Frictionless accounting: every rebalance conserves total value exactly up to
floating rounding; a tripwire test asserts no look-ahead into the rebalance
month's realized returns.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from math import ceil, sqrt

import numpy as np

from .errors import PolyModelError
from .itf import TrendForecast
from .panel import MonthIndex, ReturnPanel, SeriesId

log = logging.getLogger(__name__)


class Strategy(Enum):
    SA = "SA"   # liquidation proceeds split evenly over new names
    WA = "WA"   # proceeds split over new names proportional to AUM


class Action(Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass
class TradeLogEntry:
    month: MonthIndex
    fund: SeriesId
    action: Action
    amount: float


@dataclass
class PortfolioState:
    month: MonthIndex
    holdings: dict[SeriesId, float] = field(default_factory=dict)
    cash: float = 0.0

    @property
    def total(self) -> float:
        return self.cash + sum(self.holdings.values())


def select_funds(forecasts: list[TrendForecast],
                 include_half_unchanged: bool = False) -> list[SeriesId]:
    """Top ceil(n/2) funds by probability of a positive next-month return.

    Ties break by fund id so selection is deterministic.
    """
    if not forecasts:
        raise ValueError("forecasts must be nonempty")
    ranked = sorted(forecasts,
                    key=lambda f: (-f.p_positive(include_half_unchanged),
                                   f.fund.id))
    return [f.fund for f in ranked[:ceil(len(ranked) / 2)]]


def _liquidate(state: PortfolioState, selected: set[SeriesId],
               trades: list[TradeLogEntry]) -> float:
    proceeds = 0.0
    for fund_id in sorted(set(state.holdings) - selected):
        amount = state.holdings.pop(fund_id)
        proceeds += amount
        trades.append(TradeLogEntry(state.month, fund_id, Action.SELL, amount))
    return proceeds


def rebalance_sa(state: PortfolioState, selected: list[SeriesId],
                 aum: dict[SeriesId, float] | None = None
                 ) -> tuple[PortfolioState, list[TradeLogEntry]]:
    """Sell unselected holdings; split cash evenly over newly bought names.

    Held-and-selected positions are untouched, so weights drift from equal
    over time. If no new names are selected the cash is retained.
    """
    state = PortfolioState(state.month, dict(state.holdings), state.cash)
    trades: list[TradeLogEntry] = []
    selected_set = set(selected)
    state.cash += _liquidate(state, selected_set, trades)
    new_names = sorted(selected_set - set(state.holdings))
    if new_names and state.cash > 0.0:
        slice_amount = state.cash / len(new_names)
        for fund_id in new_names:
            state.holdings[fund_id] = slice_amount
            trades.append(TradeLogEntry(state.month, fund_id, Action.BUY,
                                        slice_amount))
        state.cash = 0.0
    return state, trades


def rebalance_wa(state: PortfolioState, selected: list[SeriesId],
                 aum: dict[SeriesId, float],
                 full_rebalance: bool = False
                 ) -> tuple[PortfolioState, list[TradeLogEntry]]:
    """Like SA but proceeds go to new names proportionally to current AUM.

    New names with no AUM are skipped with a warning. With full_rebalance the
    whole book (existing positions included) is reset to AUM weights.
    """
    state = PortfolioState(state.month, dict(state.holdings), state.cash)
    trades: list[TradeLogEntry] = []
    selected_set = set(selected)
    if full_rebalance:
        state.cash += _liquidate(state, set(), trades)
        buyable = sorted(f for f in selected_set if aum.get(f, 0.0) > 0.0)
        total_aum = sum(aum[f] for f in buyable)
        if buyable and state.cash > 0.0:
            cash = state.cash
            for fund_id in buyable:
                amount = cash * aum[fund_id] / total_aum
                state.holdings[fund_id] = amount
                trades.append(TradeLogEntry(state.month, fund_id, Action.BUY,
                                            amount))
            state.cash = 0.0
        return state, trades

    state.cash += _liquidate(state, selected_set, trades)
    new_names = sorted(selected_set - set(state.holdings))
    buyable = [f for f in new_names if aum.get(f, 0.0) > 0.0]
    for fund_id in set(new_names) - set(buyable):
        log.warning("no AUM for %s at %s; skipping buy", fund_id, state.month)
    total_aum = sum(aum[f] for f in buyable)
    if buyable and state.cash > 0.0:
        cash = state.cash
        for fund_id in buyable:
            amount = cash * aum[fund_id] / total_aum
            state.holdings[fund_id] = amount
            trades.append(TradeLogEntry(state.month, fund_id, Action.BUY,
                                        amount))
        state.cash = 0.0
    return state, trades


def step_month(state: PortfolioState, realized: dict[SeriesId, float]
               ) -> PortfolioState:
    """Mark holdings to market with the month's realized returns.

    A held fund with no return is liquidated at last value (return 0).
    """
    nxt = PortfolioState(state.month.shift(1), {}, state.cash)
    for fund_id, value in state.holdings.items():
        r = realized.get(fund_id)
        if r is None or np.isnan(r):
            log.warning("missing return for %s in %s; liquidating at value",
                        fund_id, nxt.month)
            nxt.cash += value
        else:
            nxt.holdings[fund_id] = value * (1.0 + r)
    return nxt


@dataclass
class PerformanceReport:
    months: list[MonthIndex]
    curve: np.ndarray            # starts at 1.0
    annualized_return: float
    annualized_volatility: float
    sharpe: float | None
    max_drawdown: float


def performance_stats(months: list[MonthIndex], curve: np.ndarray
                      ) -> PerformanceReport:
    curve = np.asarray(curve, dtype=float)
    if len(curve) < 2 or np.any(curve <= 0):
        raise ValueError("curve must have >= 2 positive values")
    m = len(curve) - 1
    ann_ret = (curve[-1] / curve[0]) ** (12.0 / m) - 1.0
    monthly = curve[1:] / curve[:-1] - 1.0
    ann_vol = float(monthly.std(ddof=1)) * sqrt(12.0)
    sharpe = ann_ret / ann_vol if ann_vol > 0 else None
    running_max = np.maximum.accumulate(curve)
    max_dd = float(np.max(1.0 - curve / running_max))
    return PerformanceReport(months=list(months), curve=curve,
                             annualized_return=float(ann_ret),
                             annualized_volatility=ann_vol, sharpe=sharpe,
                             max_drawdown=max_dd)


def run_backtest(panel: ReturnPanel,
                 forecasts_by_month: dict[MonthIndex, list[TrendForecast]],
                 strategy: Strategy, start: MonthIndex, end: MonthIndex,
                 include_half_unchanged: bool = False,
                 wa_full_rebalance: bool = False
                 ) -> tuple[PerformanceReport, list[TradeLogEntry]]:
    """Simulate from start to end inclusive, rebalancing at each month open
    with forecasts made strictly before it, then applying realized returns.
    """
    if start > end:
        raise ValueError("start must be <= end")
    state = PortfolioState(month=start, cash=1.0)
    months = [start.shift(-1)]
    curve = [1.0]
    trades: list[TradeLogEntry] = []
    month = start
    while month <= end:
        forecasts = forecasts_by_month.get(month)
        if not forecasts:
            raise PolyModelError(f"no forecasts for rebalance month {month}")
        selected = select_funds(forecasts, include_half_unchanged)
        state = PortfolioState(month, state.holdings, state.cash)
        pos = panel.month_pos(month)
        aum = {f: float(panel.aum[f][pos]) for f in selected
               if f in panel.aum and not np.isnan(panel.aum[f][pos])}
        before = state.total
        if strategy is Strategy.SA:
            state, new_trades = rebalance_sa(state, selected)
        else:
            state, new_trades = rebalance_wa(state, selected, aum,
                                             wa_full_rebalance)
        trades.extend(new_trades)
        after = state.total
        if abs(after - before) > 1e-9 * max(abs(before), 1.0):
            raise PolyModelError(
                f"value not conserved at {month}: {before} -> {after}")
        realized = {f: float(panel.series[f][pos]) for f in state.holdings
                    if f in panel.series}
        state = step_month(state, realized)
        months.append(month)
        curve.append(state.total)
        month = month.shift(1)
    return performance_stats(months, np.array(curve)), trades


def benchmark_report(panel: ReturnPanel, sid: SeriesId, start: MonthIndex,
                     end: MonthIndex) -> PerformanceReport:
    """Cumulative curve of an ingested benchmark series over [start, end]."""
    months = [start.shift(-1)]
    curve = [1.0]
    month = start
    while month <= end:
        r = panel.series[sid][panel.month_pos(month)]
        if np.isnan(r):
            raise PolyModelError(f"benchmark {sid} missing return at {month}")
        curve.append(curve[-1] * (1.0 + float(r)))
        months.append(month)
        month = month.shift(1)
    return performance_stats(months, np.array(curve))


# ---------------------------------------------------------------------------
# Report outputs

def write_curve_csv(path, reports: dict[str, PerformanceReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["month", "strategy", "value"])
        for name in sorted(reports):
            rep = reports[name]
            for m, v in zip(rep.months, rep.curve):
                w.writerow([str(m), name, repr(float(v))])


def write_stats_json(path, reports: dict[str, PerformanceReport]) -> None:
    payload = {
        name: {
            "annualized_return": rep.annualized_return,
            "annualized_volatility": rep.annualized_volatility,
            "sharpe": rep.sharpe,
            "max_drawdown": rep.max_drawdown,
            "final_value": float(rep.curve[-1]),
        }
        for name, rep in sorted(reports.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trades_csv(path, trades_by_strategy: dict[str, list[TradeLogEntry]]
                     ) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "month", "fund", "action", "amount"])
        for name in sorted(trades_by_strategy):
            for t in trades_by_strategy[name]:
                w.writerow([name, str(t.month), t.fund.id, t.action.value,
                            repr(float(t.amount))])
