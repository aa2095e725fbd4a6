"""Planted-signal synthetic panel generator with known ground truth.

Factors follow an AR(1) with Gaussian or Student-t innovations; signal funds
are a degree-<=4 Hermite polynomial of their planted factor (standardized
over the full simulated history) plus Gaussian noise; noise funds are white
noise. AUM and volume are positive geometric random walks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hermite import build_design
from .panel import MonthIndex, ReturnPanel, SeriesId, align, factor, fund


@dataclass(frozen=True)
class PlantedSignal:
    fund_name: str
    factor_name: str
    coeffs: tuple[float, ...]      # He_0..He_4 coefficients
    noise_sd: float

    def __post_init__(self):
        if len(self.coeffs) != 5:
            raise ValueError("coefficient vector must have length 5")
        if self.noise_sd < 0:
            raise ValueError("noise sd must be >= 0")


@dataclass(frozen=True)
class SynthSpec:
    n_factors: int = 4
    n_months: int = 120
    seed: int = 0
    start: MonthIndex = MonthIndex(2000, 1)
    signals: tuple[PlantedSignal, ...] = ()
    noise_funds: int = 4
    noise_fund_sd: float = 0.02
    factor_ar1: float = 0.1
    factor_scale: float = 0.02
    factor_t_df: float | None = None    # heavy-tail innovations when set

    def __post_init__(self):
        if not -1.0 < self.factor_ar1 < 1.0:
            raise ValueError("AR(1) coefficient must be in (-1, 1)")
        if self.factor_scale <= 0 or self.noise_fund_sd <= 0:
            raise ValueError("scales must be > 0")
        for sig in self.signals:
            if not any(sig.factor_name == f"F{j}"
                       for j in range(self.n_factors)):
                raise ValueError(f"unknown planted factor {sig.factor_name}")


def default_spec(seed: int = 0, n_months: int = 120,
                 noise_sd: float = 0.004) -> SynthSpec:
    """Four factors, four signal funds, four noise funds; noise tuned so the
    three trend classes all stay well represented."""
    signals = tuple(
        PlantedSignal(fund_name=f"S{j}", factor_name=f"F{j}",
                      coeffs=(0.004, 0.02, 0.0, 0.003, 0.0),
                      noise_sd=noise_sd)
        for j in range(4)
    )
    return SynthSpec(n_factors=4, n_months=n_months, seed=seed,
                     signals=signals, noise_funds=4)


@dataclass
class GroundTruth:
    planted: dict[str, PlantedSignal]       # fund name -> signal
    noise_funds: list[str]

    def to_json(self, path) -> None:
        payload = {
            "planted": {
                name: {"factor": sig.factor_name,
                       "coeffs": list(sig.coeffs),
                       "noise_sd": sig.noise_sd}
                for name, sig in sorted(self.planted.items())
            },
            "noise_funds": sorted(self.noise_funds),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def generate(spec: SynthSpec) -> tuple[ReturnPanel, GroundTruth]:
    """Simulate the panel. Deterministic given spec.seed (one RNG stream)."""
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    months = [spec.start.shift(k) for k in range(spec.n_months)]

    factor_rows: dict[str, np.ndarray] = {}
    for j in range(spec.n_factors):
        if spec.factor_t_df is not None:
            innov = rng.standard_t(spec.factor_t_df, size=spec.n_months)
        else:
            innov = rng.standard_normal(spec.n_months)
        innov = innov * spec.factor_scale
        row = np.empty(spec.n_months)
        prev = 0.0
        for t in range(spec.n_months):
            prev = spec.factor_ar1 * prev + innov[t]
            row[t] = prev
        factor_rows[f"F{j}"] = row

    fund_rows: dict[str, np.ndarray] = {}
    planted: dict[str, PlantedSignal] = {}
    for sig in spec.signals:
        x = factor_rows[sig.factor_name]
        z = (x - x.mean()) / x.std(ddof=1)
        signal = build_design(z).T @ np.array(sig.coeffs)
        noise = rng.standard_normal(spec.n_months) * sig.noise_sd
        fund_rows[sig.fund_name] = signal + noise
        planted[sig.fund_name] = sig
    noise_names = [f"N{j}" for j in range(spec.noise_funds)]
    for name in noise_names:
        fund_rows[name] = rng.standard_normal(spec.n_months) * spec.noise_fund_sd

    def walk(start_scale: float, step_sd: float) -> np.ndarray:
        start = start_scale * float(rng.lognormal(0.0, 0.5))
        steps = rng.standard_normal(spec.n_months) * step_sd
        return start * np.exp(np.cumsum(steps))

    raw_returns = []
    raw_aum = []
    raw_volume = []
    for j in range(spec.n_factors):
        raw_returns.append((factor(f"F{j}"),
                            list(zip(months, factor_rows[f"F{j}"]))))
    for name in sorted(fund_rows):
        sid = fund(name)
        raw_returns.append((sid, list(zip(months, fund_rows[name]))))
        raw_aum.append((sid, list(zip(months, walk(1e8, 0.05)))))
        raw_volume.append((sid, list(zip(months, walk(1e6, 0.10)))))

    panel = align(raw_returns, raw_aum, raw_volume)
    return panel, GroundTruth(planted=planted, noise_funds=noise_names)


# ---------------------------------------------------------------------------
# Spec file I/O for the CLI

def spec_from_json(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    signals = tuple(
        PlantedSignal(fund_name=s["fund"], factor_name=s["factor"],
                      coeffs=tuple(s["coeffs"]), noise_sd=s["noise_sd"])
        for s in raw.get("signals", ())
    )
    kwargs = dict(
        n_factors=raw.get("n_factors", 4),
        n_months=raw.get("n_months", 120),
        seed=raw.get("seed", 0),
        signals=signals,
        noise_funds=raw.get("noise_funds", 4),
        noise_fund_sd=raw.get("noise_fund_sd", 0.02),
        factor_ar1=raw.get("factor_ar1", 0.1),
        factor_scale=raw.get("factor_scale", 0.02),
        factor_t_df=raw.get("factor_t_df"),
    )
    if "start" in raw:
        kwargs["start"] = MonthIndex.parse(raw["start"])
    return SynthSpec(**kwargs)
