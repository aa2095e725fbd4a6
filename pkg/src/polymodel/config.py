"""Flat key=value run configuration with fail-fast unknown-key handling."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .panel import MonthIndex


@dataclass
class RunConfig:
    returns_path: str = ""
    aum_path: str = ""
    volume_path: str = ""
    benchmark_id: str = ""          # optional ingested benchmark series id
    window_len: int = 36
    ridge_lambda: float = 1e-4
    n_shuffles: int = 200
    score_threshold: float = 3.0
    kappa: float = 0.05
    gamma: float = 2.0
    xi: float = 2.33
    tau: float = 0.005
    lookback: int = 12              # classifier T
    d_model: int = 32
    n_heads: int = 2
    n_blocks: int = 2
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    train_split: float = 0.7        # chronological fraction of sample months
    strategies: str = "SA,WA"
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    raw_text: str = field(default="", repr=False, compare=False)

    def strategy_list(self) -> list[str]:
        names = [s.strip().upper() for s in self.strategies.split(",") if s.strip()]
        for name in names:
            if name not in ("SA", "WA"):
                raise ConfigError(f"unknown strategy {name!r}")
        return names


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)
                if f.name != "raw_text"}


def parse_config(path) -> RunConfig:
    """Parse key = value lines; '#' comments; unknown keys are errors."""
    text = Path(path).read_text(encoding="utf-8")
    cfg = RunConfig(raw_text=text)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind == "int":
                setattr(cfg, key, int(value))
            elif kind == "float":
                setattr(cfg, key, float(value))
            else:
                setattr(cfg, key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return cfg


def echo_config(cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.raw_text, encoding="utf-8")
