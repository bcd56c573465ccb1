"""Fixed-interval bars built from a trade stream, forward returns and
threshold labels.

A bar summarises every trade whose timestamp falls in
``[i * interval_ms, (i + 1) * interval_ms)``. Seven of its fields are model
features (:data:`FEATURE_COLUMNS`); ``last_price`` and the forward returns
are carried along for labelling and simulation only.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import columnar
from .errors import EmptyInput, InvalidConfig, MissingReturn, UnsortedInput
from .trades import TradeStream

FEATURE_COLUMNS = (
    "n_trades",
    "volume",
    "active_buy_volume",
    "amplitude",
    "price_change",
    "vwap",
    "taker_ratio",
)

_BASE_COLUMNS = ("group_index",) + FEATURE_COLUMNS + ("last_price", "is_empty")

UP = (1, 0)
DOWN = (0, 1)


@dataclass(frozen=True)
class BarConfig:
    interval_ms: int = 60_000
    horizons: tuple[int, ...] = (15, 30)

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if self.interval_ms <= 0:
            raise InvalidConfig("interval_ms must be positive")
        if not self.horizons or min(self.horizons) <= 0:
            raise InvalidConfig("horizons must be a non-empty list of positive integers")


@dataclass(frozen=True)
class LabelConfig:
    horizon_m: int
    epsilon: float = 0.0


@dataclass(frozen=True)
class IntervalBar:
    group_index: int
    n_trades: int
    volume: float
    active_buy_volume: float
    amplitude: float
    price_change: float
    vwap: float
    taker_ratio: float
    last_price: float
    is_empty: bool
    fwd_return: dict[int, float] = field(default_factory=dict)


@dataclass(eq=False)
class BarTable:
    """Column-oriented sequence of :class:`IntervalBar`.

    ``fwd_return[m]`` holds NaN where bar ``t + m`` lies past the end.
    """

    interval_ms: int
    group_index: np.ndarray
    n_trades: np.ndarray
    volume: np.ndarray
    active_buy_volume: np.ndarray
    amplitude: np.ndarray
    price_change: np.ndarray
    vwap: np.ndarray
    taker_ratio: np.ndarray
    last_price: np.ndarray
    is_empty: np.ndarray
    fwd_return: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.group_index)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return self.slice(key.start, key.stop)
        i = int(key)
        fwd = {m: float(v[i]) for m, v in self.fwd_return.items() if not np.isnan(v[i])}
        return IntervalBar(int(self.group_index[i]), int(self.n_trades[i]),
                           float(self.volume[i]), float(self.active_buy_volume[i]),
                           float(self.amplitude[i]), float(self.price_change[i]),
                           float(self.vwap[i]), float(self.taker_ratio[i]),
                           float(self.last_price[i]), bool(self.is_empty[i]), fwd)

    def __iter__(self) -> Iterator[IntervalBar]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BarTable):
            return NotImplemented
        if self.interval_ms != other.interval_ms or set(self.fwd_return) != set(other.fwd_return):
            return False
        same = all(np.array_equal(getattr(self, c), getattr(other, c)) for c in _BASE_COLUMNS)
        return same and all(np.array_equal(v, other.fwd_return[m], equal_nan=True)
                            for m, v in self.fwd_return.items())

    def slice(self, start: int | None, stop: int | None) -> "BarTable":
        s = slice(start, stop)
        return BarTable(self.interval_ms, *(getattr(self, c)[s] for c in _BASE_COLUMNS),
                        fwd_return={m: v[s] for m, v in self.fwd_return.items()})

    def features(self) -> np.ndarray:
        """``(n, 7)`` float matrix in :data:`FEATURE_COLUMNS` order."""
        return np.column_stack([getattr(self, c).astype(np.float64) for c in FEATURE_COLUMNS])

    def columns(self) -> dict[str, np.ndarray]:
        out = {c: getattr(self, c) for c in _BASE_COLUMNS}
        for m in sorted(self.fwd_return):
            out[f"fwd_{m}"] = self.fwd_return[m]
        return out

    @classmethod
    def from_columns(cls, interval_ms: int, cols: dict[str, np.ndarray]) -> "BarTable":
        fwd = {int(k[4:]): np.asarray(v, dtype=np.float64)
               for k, v in cols.items() if k.startswith("fwd_")}
        return cls(
            int(interval_ms),
            np.asarray(cols["group_index"]).astype(np.int64),
            np.asarray(cols["n_trades"]).astype(np.int64),
            *(np.asarray(cols[c], dtype=np.float64) for c in
              ("volume", "active_buy_volume", "amplitude", "price_change", "vwap",
               "taker_ratio", "last_price")),
            np.asarray(cols["is_empty"]).astype(bool),
            fwd_return=fwd,
        )


def group_index(timestamp_ms: int, interval_ms: int) -> int:
    return timestamp_ms // interval_ms


def _segment_fsum(values: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    # math.fsum is correctly rounded, so the result does not depend on how
    # the stream was chunked or on summation order
    vals = values.tolist()
    return np.array([math.fsum(vals[s:e]) for s, e in zip(starts.tolist(), ends.tolist())],
                    dtype=np.float64)


def resample(trades: TradeStream, cfg: BarConfig, start_group: int | None = None,
             carry: tuple[float, float] | None = None) -> BarTable:
    """Aggregate a time-sorted trade stream into one bar per interval.

    Bars span every group index from the first trade's group (or
    ``start_group``) through the last trade's group. Intervals with no
    trades get ``is_empty=True``, zero activity features and the previous
    bar's ``vwap``/``last_price``. Leading empty intervals need ``carry``
    (the ``(vwap, last_price)`` of the bar before ``start_group``).
    """
    l = cfg.interval_ms
    if len(trades) == 0:
        return _empty_table(l)
    ts = trades.timestamp
    if np.any(ts[1:] < ts[:-1]):
        raise UnsortedInput("trades must be sorted by timestamp")
    groups = ts // l
    starts = np.concatenate(([0], np.flatnonzero(groups[1:] != groups[:-1]) + 1))
    ends = np.append(starts[1:], len(ts))
    occupied = groups[starts]

    price, amount = trades.price, trades.amount
    taker_amount = np.where(trades.is_buyer_maker, 0.0, amount)
    volume = _segment_fsum(amount, starts, ends)
    buy = _segment_fsum(taker_amount, starts, ends)
    notional = _segment_fsum(price * amount, starts, ends)
    hi = np.maximum.reduceat(price, starts)
    lo = np.minimum.reduceat(price, starts)

    first = int(occupied[0]) if start_group is None else int(start_group)
    if first > occupied[0]:
        raise ValueError("start_group lies after the first trade")
    if first < occupied[0] and carry is None:
        raise InvalidConfig("leading empty interval has no price to carry forward")
    n = int(occupied[-1]) - first + 1
    pos = (occupied - first).astype(np.int64)

    n_trades = np.zeros(n, dtype=np.int64)
    n_trades[pos] = ends - starts
    vol = np.zeros(n)
    vol[pos] = volume
    abv = np.zeros(n)
    abv[pos] = buy
    amp = np.zeros(n)
    amp[pos] = hi - lo
    chg = np.zeros(n)
    chg[pos] = price[ends - 1] - price[starts]
    ratio = np.zeros(n)
    ratio[pos] = buy / volume

    is_empty = np.ones(n, dtype=bool)
    is_empty[pos] = False
    # forward-fill vwap and last price through empty intervals
    src = np.full(n, -1, dtype=np.int64)
    src[pos] = np.arange(len(pos))
    filled = np.maximum.accumulate(src)
    vw = notional / volume
    last = price[ends - 1]
    vwap = np.where(filled >= 0, vw[np.maximum(filled, 0)], carry[0] if carry else np.nan)
    last_price = np.where(filled >= 0, last[np.maximum(filled, 0)], carry[1] if carry else np.nan)

    return BarTable(l, np.arange(first, first + n, dtype=np.int64), n_trades, vol, abv,
                    amp, chg, vwap, ratio, last_price, is_empty)


def _empty_table(interval_ms: int) -> BarTable:
    f = np.empty(0)
    return BarTable(interval_ms, np.empty(0, np.int64), np.empty(0, np.int64), f, f, f, f, f,
                    f, f, np.empty(0, bool))


def forward_returns(bars: BarTable, horizons: Sequence[int]) -> BarTable:
    """Attach ``vwap[t + m] / vwap[t] - 1`` for each horizon ``m``."""
    fwd = dict(bars.fwd_return)
    n = len(bars)
    for m in horizons:
        m = int(m)
        if m <= 0:
            raise InvalidConfig("horizons must be positive")
        out = np.full(n, np.nan)
        if m < n:
            out[: n - m] = bars.vwap[m:] / bars.vwap[: n - m] - 1.0
        fwd[m] = out
    return replace(bars, fwd_return=fwd)


def make_bars(trades: TradeStream, cfg: BarConfig) -> BarTable:
    return forward_returns(resample(trades, cfg), cfg.horizons)


def label(bar: IntervalBar, cfg: LabelConfig) -> tuple[int, int]:
    """``(1, 0)`` when the forward return is at least epsilon, else ``(0, 1)``."""
    try:
        c = bar.fwd_return[cfg.horizon_m]
    except KeyError:
        raise MissingReturn(f"bar {bar.group_index} has no return for m={cfg.horizon_m}") from None
    return UP if c >= cfg.epsilon else DOWN


def labels(bars: BarTable, cfg: LabelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`label`.

    Returns ``(onehot, valid)`` where ``onehot`` is ``(n, 2)`` float and
    rows with ``valid == False`` (no forward return) are zero.
    """
    if cfg.horizon_m not in bars.fwd_return:
        raise MissingReturn(f"no forward returns computed for m={cfg.horizon_m}")
    c = bars.fwd_return[cfg.horizon_m]
    valid = ~np.isnan(c)
    up = valid & (c >= cfg.epsilon)
    onehot = np.zeros((len(c), 2))
    onehot[up, 0] = 1.0
    onehot[valid & ~up, 1] = 1.0
    return onehot, valid


def class_balance(onehot) -> float:
    """Fraction of ``[1, 0]`` labels."""
    y = np.asarray(onehot, dtype=np.float64).reshape(-1, 2)
    if len(y) == 0:
        raise EmptyInput("no labels")
    return float(np.mean(y[:, 0] == 1.0))


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(x)


def write_bars_csv(bars: BarTable, path: str | os.PathLike) -> None:
    cols = bars.columns()
    names = list(cols)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# interval_ms={bars.interval_ms}\n")
        fh.write(",".join(names) + "\n")
        ints = {"group_index", "n_trades"}
        rows = [cols[c].tolist() for c in names]
        for vals in zip(*rows):
            out = []
            for c, v in zip(names, vals):
                if c in ints:
                    out.append(str(int(v)))
                elif c == "is_empty":
                    out.append("1" if v else "0")
                else:
                    out.append(_fmt(float(v)))
            fh.write(",".join(out) + "\n")


def read_bars_csv(path: str | os.PathLike) -> BarTable:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# interval_ms="):
            raise ValueError(f"{path}: missing interval header")
        interval = int(first.split("=", 1)[1])
        reader = csv.reader(fh)
        names = next(reader)
        data = list(reader)
    cols = {}
    for j, c in enumerate(names):
        raw = [r[j] for r in data]
        if c in ("group_index", "n_trades", "is_empty"):
            cols[c] = np.array([int(v) for v in raw], dtype=np.int64)
        else:
            cols[c] = np.array([float(v) if v else np.nan for v in raw], dtype=np.float64)
    return BarTable.from_columns(interval, cols)


def write_bars_bin(bars: BarTable, path: str | os.PathLike) -> None:
    columnar.write_columns(path, bars.columns(), meta={"kind": "bars",
                                                       "interval_ms": bars.interval_ms})


def read_bars_bin(path: str | os.PathLike) -> BarTable:
    cols, meta = columnar.read_columns(path)
    return BarTable.from_columns(meta["interval_ms"], cols)
