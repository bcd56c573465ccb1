"""Experiment configuration: an INI file with one section per stage.

Every key is typed by the dataclass field it lands in. Unknown sections
or keys are errors, and :meth:`ExperimentConfig.validate` reports every
violated constraint at once.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import typing
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigInvalid
from .neural import TrainConfig


@dataclass(frozen=True)
class DataSection:
    instrument: str = "SYNTH"
    source: str = "synth"  # synth | fetch | file
    trades_path: str = ""


@dataclass(frozen=True)
class SynthSection:
    seed: int = 7
    n: int = 100_000
    regime: str = "planted"
    mean_interarrival_ms: float = 1000.0
    volatility: float = 2e-5
    jump: float = 2e-3
    taker_bias: float = 0.4
    block_ms: int = 60_000


@dataclass(frozen=True)
class FetchSection:
    endpoint: str = ""
    exchange_config: str = ""
    start_ms: int = 0
    end_ms: int = 0


@dataclass(frozen=True)
class BarsSection:
    interval_ms: int = 60_000
    horizons: tuple[int, ...] = (1,)


@dataclass(frozen=True)
class LabelSection:
    horizon_m: int = 1
    epsilon: float = 0.0
    eval_epsilon: float = 0.0


@dataclass(frozen=True)
class StationaritySection:
    significance: float = 0.10


@dataclass(frozen=True)
class SplitSection:
    p: int = 20
    q: int = 30
    seed: int = 7
    fraction: float = 0.5
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class ModelSection:
    T: int = 10
    N: int = 16


@dataclass(frozen=True)
class GridSection:
    T_values: tuple[int, ...] = (5, 10)
    N_values: tuple[int, ...] = (8, 16)


@dataclass(frozen=True)
class BacktestSection:
    cost_rate: float = 0.0003
    size: float = 1.0
    fill: str = "last"
    short_mode: str = "ratio"
    rolling_window_bars: int = 0  # 0 means one day of bars


SECTIONS = {
    "data": DataSection,
    "synth": SynthSection,
    "fetch": FetchSection,
    "bars": BarsSection,
    "label": LabelSection,
    "stationarity": StationaritySection,
    "split": SplitSection,
    "model": ModelSection,
    "train": TrainConfig,
    "grid": GridSection,
    "backtest": BacktestSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = DataSection()
    synth: SynthSection = SynthSection()
    fetch: FetchSection = FetchSection()
    bars: BarsSection = BarsSection()
    label: LabelSection = LabelSection()
    stationarity: StationaritySection = StationaritySection()
    split: SplitSection = SplitSection()
    model: ModelSection = ModelSection()
    train: TrainConfig = TrainConfig()
    grid: GridSection = GridSection()
    backtest: BacktestSection = BacktestSection()

    def to_dict(self) -> dict:
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def section_hash(self, *names: str) -> str:
        doc = {n: self.to_dict()[n] for n in names}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def validate(self) -> None:
        v = []
        if self.data.source not in ("synth", "fetch", "file"):
            v.append(f"data.source must be synth, fetch or file, not {self.data.source!r}")
        if self.data.source == "file" and not self.data.trades_path:
            v.append("data.trades_path is required when data.source = file")
        if self.data.source == "fetch" and self.fetch.end_ms <= self.fetch.start_ms:
            v.append("fetch.end_ms must exceed fetch.start_ms")
        if self.synth.n < 0:
            v.append("synth.n must be non-negative")
        if self.synth.regime not in ("random_walk", "planted"):
            v.append("synth.regime must be random_walk or planted")
        if self.bars.interval_ms <= 0:
            v.append("bars.interval_ms must be positive")
        if not self.bars.horizons or min(self.bars.horizons) <= 0:
            v.append("bars.horizons must be non-empty positive integers")
        if self.label.horizon_m not in self.bars.horizons:
            v.append(f"label.horizon_m={self.label.horizon_m} is not in bars.horizons")
        if self.stationarity.significance not in (0.01, 0.05, 0.10):
            v.append("stationarity.significance must be 0.01, 0.05 or 0.10")
        if self.model.T <= 0 or self.model.N <= 0:
            v.append("model.T and model.N must be positive")
        if self.split.p < 0:
            v.append("split.p must be non-negative")
        if self.split.p > 0 and self.split.q <= self.model.T:
            v.append(f"split.q={self.split.q} must exceed model.T={self.model.T}")
        if self.grid.T_values and self.split.p > 0 and self.split.q <= max(self.grid.T_values):
            v.append("split.q must exceed every grid.T_values entry")
        if not 0.10 <= self.split.fraction <= 0.50:
            v.append("split.fraction must lie in [0.10, 0.50]")
        if not 0.0 < self.split.holdout_fraction < 1.0:
            v.append("split.holdout_fraction must lie in (0, 1)")
        v.extend(f"train: {msg}" for msg in self.train.violations())
        if not self.grid.T_values or not self.grid.N_values:
            v.append("grid.T_values and grid.N_values must be non-empty")
        if self.backtest.cost_rate < 0:
            v.append("backtest.cost_rate must be non-negative")
        if self.backtest.size <= 0:
            v.append("backtest.size must be positive")
        if self.backtest.fill not in ("last", "vwap"):
            v.append("backtest.fill must be last or vwap")
        if self.backtest.short_mode not in ("ratio", "symmetric"):
            v.append("backtest.short_mode must be ratio or symmetric")
        if self.backtest.rolling_window_bars < 0:
            v.append("backtest.rolling_window_bars must be non-negative")
        if v:
            raise ConfigInvalid(v)


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, tuple):
        return list(d)
    return d


def _convert(raw: str, tp, where: str):
    raw = raw.strip()
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw.replace("_", ""))
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip('"')
        if typing.get_origin(tp) is tuple:
            inner = typing.get_args(tp)[0]
            parts = [p for p in raw.strip("[]()").replace(",", " ").split() if p]
            return tuple(_convert(p, inner, where) for p in parts)
    except ValueError:
        raise ConfigInvalid([f"{where}: cannot read {raw!r} as {getattr(tp, '__name__', tp)}"]) \
            from None
    raise TypeError(f"unsupported config type {tp}")


def _apply(cfg: ExperimentConfig, section: str, key: str, raw: str,
           problems: list[str]) -> ExperimentConfig:
    if section not in SECTIONS:
        problems.append(f"unknown section [{section}]")
        return cfg
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    if key not in hints or key not in {f.name for f in fields(cls)}:
        problems.append(f"unknown key {section}.{key}")
        return cfg
    try:
        value = _convert(raw, hints[key], f"{section}.{key}")
    except ConfigInvalid as exc:
        problems.extend(exc.violations)
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **{key: value})})


def load_config(path: str | os.PathLike | None = None,
                overrides: typing.Sequence[str] = ()) -> ExperimentConfig:
    """Read ``path`` (if given), apply ``section.key=value`` overrides and
    validate."""
    cfg = ExperimentConfig()
    problems: list[str] = []
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if not parser.read(path, encoding="utf-8"):
            raise ConfigInvalid([f"cannot read config file {path}"])
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg = _apply(cfg, section, key, raw, problems)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            problems.append(f"override {item!r} is not section.key=value")
            continue
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key, raw, problems)
    if problems:
        raise ConfigInvalid(problems)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`load_config` reads back to ``cfg``."""
    out = []
    for name, section in cfg.to_dict().items():
        out.append(f"[{name}]")
        for k, v in section.items():
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)
