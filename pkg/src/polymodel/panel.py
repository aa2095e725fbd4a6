"""Monthly calendar data model: aligned return panels and rolling windows.

All series live on a shared monthly calendar. Missing observations are stored
as NaN and are never imputed; downstream fitting skips incomplete windows.
Returns are simple monthly returns as decimal fractions (0.01 = 1%).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConstantSeriesError, PolyModelError


class SeriesKind(Enum):
    FUND = "fund"
    FACTOR = "factor"
    BENCHMARK = "benchmark"


@dataclass(frozen=True, order=True)
class MonthIndex:
    """A calendar month (year, month). Total order follows calendar order."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, n: int) -> "MonthIndex":
        return cls(n // 12, n % 12 + 1)

    def shift(self, months: int) -> "MonthIndex":
        return MonthIndex.from_ordinal(self.ordinal() + months)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    @classmethod
    def parse(cls, text: str) -> "MonthIndex":
        try:
            y, m = text.strip().split("-")
            return cls(int(y), int(m))
        except (ValueError, AttributeError) as exc:
            raise ValueError(f"bad month {text!r}, expected YYYY-MM") from exc


@dataclass(frozen=True)
class SeriesId:
    kind: SeriesKind
    id: str

    def __lt__(self, other: "SeriesId") -> bool:
        return (self.kind.value, self.id) < (other.kind.value, other.id)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


def fund(name: str) -> SeriesId:
    return SeriesId(SeriesKind.FUND, name)


def factor(name: str) -> SeriesId:
    return SeriesId(SeriesKind.FACTOR, name)


def benchmark(name: str) -> SeriesId:
    return SeriesId(SeriesKind.BENCHMARK, name)


@dataclass(frozen=True)
class Incomplete:
    """Marker returned when a requested window has missing observations."""

    missing: int


RawSeries = Sequence[tuple[SeriesId, Sequence[tuple[MonthIndex, float]]]]


@dataclass
class ReturnPanel:
    """Calendar-aligned monthly panel of returns plus AUM/volume side series.

    Immutable after construction; rows are numpy arrays with NaN as the
    explicit missing marker.
    """

    calendar: tuple[MonthIndex, ...]
    series: dict[SeriesId, np.ndarray] = field(default_factory=dict)
    aum: dict[SeriesId, np.ndarray] = field(default_factory=dict)
    volume: dict[SeriesId, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.calendar)
        for table in (self.series, self.aum, self.volume):
            for sid, row in table.items():
                if len(row) != n:
                    raise PolyModelError(
                        f"row for {sid} has length {len(row)}, calendar has {n}"
                    )
        for table in (self.aum, self.volume):
            for sid, row in table.items():
                vals = row[~np.isnan(row)]
                if np.any(vals <= 0):
                    raise PolyModelError(f"non-positive AUM/volume for {sid}")

    def month_pos(self, month: MonthIndex) -> int:
        if not self.calendar:
            raise KeyError(f"{month} not in empty calendar")
        pos = month.ordinal() - self.calendar[0].ordinal()
        if pos < 0 or pos >= len(self.calendar):
            raise KeyError(f"{month} not in panel calendar")
        return pos

    def ids(self, kind: SeriesKind) -> list[SeriesId]:
        return sorted(s for s in self.series if s.kind == kind)

    def value_at(self, sid: SeriesId, month: MonthIndex) -> float:
        return float(self.series[sid][self.month_pos(month)])


def _place(calendar: Sequence[MonthIndex], obs: Sequence[tuple[MonthIndex, float]],
           label: str) -> np.ndarray:
    start = calendar[0].ordinal()
    row = np.full(len(calendar), np.nan)
    for m, v in obs:
        pos = m.ordinal() - start
        if not np.isnan(row[pos]):
            raise PolyModelError(f"duplicate observation for {label} at {m}")
        row[pos] = v
    return row


def align(raw_series: RawSeries,
          raw_aum: RawSeries = (),
          raw_volume: RawSeries = ()) -> ReturnPanel:
    """Build the union calendar and place every series on it.

    Missing entries become NaN. Duplicate (series, month) observations are
    rejected. Idempotent: re-aligning a panel's own contents reproduces it.
    """
    all_months: list[int] = []
    for _, obs in (*raw_series, *raw_aum, *raw_volume):
        all_months.extend(m.ordinal() for m, _ in obs)
    if not all_months:
        return ReturnPanel(calendar=())
    lo, hi = min(all_months), max(all_months)
    calendar = tuple(MonthIndex.from_ordinal(n) for n in range(lo, hi + 1))

    def build(raw: RawSeries) -> dict[SeriesId, np.ndarray]:
        out: dict[SeriesId, np.ndarray] = {}
        for sid, obs in raw:
            if sid in out:
                raise PolyModelError(f"duplicate series {sid}")
            out[sid] = _place(calendar, obs, str(sid))
        return out

    return ReturnPanel(calendar=calendar, series=build(raw_series),
                       aum=build(raw_aum), volume=build(raw_volume))


def extract_row(panel: ReturnPanel, sid: SeriesId, end: MonthIndex,
                length: int) -> np.ndarray | Incomplete:
    """One series' trailing `length`-month window ending at `end` (inclusive)."""
    if sid not in panel.series:
        raise KeyError(f"unknown series {sid}")
    end_pos = panel.month_pos(end)
    if length > end_pos + 1:
        raise PolyModelError(
            f"window of {length} months ending {end} exceeds calendar")
    row = panel.series[sid][end_pos + 1 - length: end_pos + 1]
    missing = int(np.isnan(row).sum())
    if missing:
        return Incomplete(missing=missing)
    return row.copy()


def extract_window(panel: ReturnPanel, target: SeriesId, factor_id: SeriesId,
                   end: MonthIndex, length: int
                   ) -> tuple[np.ndarray, np.ndarray] | Incomplete:
    """Paired complete windows for (target, factor), or Incomplete with the
    total missing count across both rows."""
    y = extract_row(panel, target, end, length)
    x = extract_row(panel, factor_id, end, length)
    missing = (y.missing if isinstance(y, Incomplete) else 0) + \
              (x.missing if isinstance(x, Incomplete) else 0)
    if missing:
        return Incomplete(missing=missing)
    return y, x


def standardize(row: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Z-score a complete row (n-1 denominator). Returns (z, mean, sd)."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or len(row) < 2:
        raise PolyModelError("standardize needs a 1-d row of length >= 2")
    if np.isnan(row).any():
        raise PolyModelError("standardize requires a complete row")
    mean = float(row.mean())
    sd = float(row.std(ddof=1))
    if sd == 0.0:
        raise ConstantSeriesError("row has zero standard deviation")
    return (row - mean) / sd, mean, sd


# ---------------------------------------------------------------------------
# CSV ingestion (UTF-8, header row, comma-separated)

_KINDS = {"fund": SeriesKind.FUND, "factor": SeriesKind.FACTOR,
          "benchmark": SeriesKind.BENCHMARK}


def read_returns_csv(path) -> RawSeries:
    """Columns: date,series_id,series_kind,return with date YYYY-MM."""
    rows: dict[SeriesId, list[tuple[MonthIndex, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "series_id", "series_kind", "return"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise PolyModelError(f"{path}: expected columns {sorted(required)}")
        for rec in reader:
            kind = _KINDS.get(rec["series_kind"].strip().lower())
            if kind is None:
                raise PolyModelError(
                    f"{path}: bad series_kind {rec['series_kind']!r}")
            sid = SeriesId(kind, rec["series_id"].strip())
            rows.setdefault(sid, []).append(
                (MonthIndex.parse(rec["date"]), float(rec["return"])))
    return [(sid, obs) for sid, obs in sorted(rows.items())]


def _read_side_csv(path, value_col: str) -> RawSeries:
    rows: dict[SeriesId, list[tuple[MonthIndex, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "fund_id", value_col}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise PolyModelError(f"{path}: expected columns {sorted(required)}")
        for rec in reader:
            sid = fund(rec["fund_id"].strip())
            rows.setdefault(sid, []).append(
                (MonthIndex.parse(rec["date"]), float(rec[value_col])))
    return [(sid, obs) for sid, obs in sorted(rows.items())]


def read_aum_csv(path) -> RawSeries:
    return _read_side_csv(path, "aum")


def read_volume_csv(path) -> RawSeries:
    return _read_side_csv(path, "volume")


def load_panel(returns_path, aum_path=None, volume_path=None) -> ReturnPanel:
    return align(
        read_returns_csv(returns_path),
        read_aum_csv(aum_path) if aum_path else (),
        read_volume_csv(volume_path) if volume_path else (),
    )


def write_panel_csvs(panel: ReturnPanel, returns_path, aum_path=None,
                     volume_path=None) -> None:
    """Inverse of load_panel for the synthetic generator and round-trip tests."""
    with open(returns_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "series_id", "series_kind", "return"])
        for sid in sorted(panel.series):
            row = panel.series[sid]
            for m, v in zip(panel.calendar, row):
                if not np.isnan(v):
                    w.writerow([str(m), sid.id, sid.kind.value, repr(float(v))])
    for path, table, col in ((aum_path, panel.aum, "aum"),
                             (volume_path, panel.volume, "volume")):
        if path is None:
            continue
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "fund_id", col])
            for sid in sorted(table):
                for m, v in zip(panel.calendar, table[sid]):
                    if not np.isnan(v):
                        w.writerow([str(m), sid.id, repr(float(v))])
