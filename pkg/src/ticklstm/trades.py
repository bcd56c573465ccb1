"""Trade-by-trade records: the columnar stream container, CSV I/O and a
seeded synthetic generator."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping, Union

import numpy as np

from .errors import EmptySource, InvalidConfig, MalformedRow, NonMonotonicTimestamp

#: Canonical column order of the CSV interchange format.
DEFAULT_SCHEMA: dict[str, str] = {
    "trade_id": "TradeID",
    "timestamp": "Timestamp",
    "price": "Price",
    "amount": "Amount",
    "is_buyer_maker": "IsBuyerMaker",
}

_FIELDS = tuple(DEFAULT_SCHEMA)


@dataclass(frozen=True)
class Trade:
    """One executed transaction.

    ``is_buyer_maker`` is True when the buyer's order rested on the book,
    i.e. the trade was an active sell.
    """

    trade_id: int
    timestamp: int
    price: float
    amount: float
    is_buyer_maker: bool


@dataclass(frozen=True)
class TradeStreamMeta:
    instrument: str
    first_timestamp: int
    last_timestamp: int
    count: int


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    if isinstance(a, np.ndarray) and a.dtype == dtype and not a.flags.writeable:
        return a
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TradeStream:
    """Immutable, columnar, time-ordered sequence of :class:`Trade`.

    Indexing with an int yields a :class:`Trade`; slicing yields a
    ``TradeStream``. The arrays are read-only so a stream can be shared
    freely between threads.
    """

    trade_id: np.ndarray
    timestamp: np.ndarray
    price: np.ndarray
    amount: np.ndarray
    is_buyer_maker: np.ndarray
    instrument: str = ""

    def __post_init__(self):
        n = len(self.trade_id)
        for name, dtype in (("trade_id", np.int64), ("timestamp", np.int64),
                            ("price", np.float64), ("amount", np.float64),
                            ("is_buyer_maker", np.bool_)):
            arr = _frozen(getattr(self, name), dtype)
            if arr.ndim != 1 or len(arr) != n:
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, instrument: str = "") -> "TradeStream":
        return cls(*(np.empty(0, dtype=d) for d in
                     (np.int64, np.int64, np.float64, np.float64, np.bool_)),
                   instrument=instrument)

    @classmethod
    def from_trades(cls, trades: Iterable[Trade], instrument: str = "") -> "TradeStream":
        rows = list(trades)
        if not rows:
            return cls.empty(instrument)
        return cls(
            np.array([t.trade_id for t in rows], dtype=np.int64),
            np.array([t.timestamp for t in rows], dtype=np.int64),
            np.array([t.price for t in rows], dtype=np.float64),
            np.array([t.amount for t in rows], dtype=np.float64),
            np.array([t.is_buyer_maker for t in rows], dtype=np.bool_),
            instrument=instrument,
        )

    def __len__(self) -> int:
        return len(self.trade_id)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return TradeStream(self.trade_id[key], self.timestamp[key], self.price[key],
                               self.amount[key], self.is_buyer_maker[key],
                               instrument=self.instrument)
        return Trade(int(self.trade_id[key]), int(self.timestamp[key]),
                     float(self.price[key]), float(self.amount[key]),
                     bool(self.is_buyer_maker[key]))

    def __iter__(self) -> Iterator[Trade]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TradeStream):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _FIELDS)

    @property
    def meta(self) -> TradeStreamMeta:
        if len(self) == 0:
            return TradeStreamMeta(self.instrument, 0, 0, 0)
        return TradeStreamMeta(self.instrument, int(self.timestamp[0]),
                               int(self.timestamp[-1]), len(self))

    def validate(self) -> None:
        """Raise if any Trade invariant is violated."""
        if len(self) == 0:
            return
        if not (np.all(self.price > 0) and np.all(self.amount > 0) and np.all(self.timestamp > 0)):
            raise ValueError("price, amount and timestamp must be positive")
        if np.any(np.diff(self.timestamp) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if np.any(np.diff(self.trade_id) <= 0):
            raise ValueError("trade ids must be strictly increasing")

    @staticmethod
    def concat(parts: Iterable["TradeStream"], instrument: str = "") -> "TradeStream":
        parts = [p for p in parts if len(p)]
        if not parts:
            return TradeStream.empty(instrument)
        return TradeStream(*(np.concatenate([getattr(p, f) for p in parts]) for f in _FIELDS),
                           instrument=instrument or parts[0].instrument)


# ---------------------------------------------------------------------------
# CSV


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(f"expected True/False, got {text!r}")


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def read_trades(source: Union[str, os.PathLike, bytes, IO],
                schema: Mapping[str, str] | None = None,
                instrument: str = "",
                delimiter: str = ",") -> TradeStream:
    """Parse delimited trade text into a :class:`TradeStream`.

    ``schema`` maps field names (``trade_id``, ``timestamp``, ``price``,
    ``amount``, ``is_buyer_maker``) to header names. Rows are validated as
    they are read; the first bad row raises with its 1-based line number
    (the header is line 1).
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptySource("source has no header") from None
        header = [h.strip().lstrip("﻿") for h in header]
        try:
            cols = [header.index(schema[f]) for f in _FIELDS]
        except ValueError:
            missing = [schema[f] for f in _FIELDS if schema[f] not in header]
            raise MalformedRow(1, f"header lacks columns {missing}") from None

        ids: list[int] = []
        ts: list[int] = []
        px: list[float] = []
        am: list[float] = []
        mk: list[bool] = []
        width = len(header)
        last_t = None
        last_id = None
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise MalformedRow(line, f"expected {width} fields, got {len(row)}")
            try:
                tid = int(row[cols[0]])
                t = int(row[cols[1]])
                p = float(row[cols[2]])
                a = float(row[cols[3]])
                m = _parse_bool(row[cols[4]])
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
            if not (p > 0 and a > 0 and t > 0) or not (np.isfinite(p) and np.isfinite(a)):
                raise MalformedRow(line, "price, amount and timestamp must be positive and finite")
            if last_t is not None and t < last_t:
                raise NonMonotonicTimestamp(line)
            if last_id is not None and tid <= last_id:
                raise MalformedRow(line, "trade id not strictly increasing")
            last_t, last_id = t, tid
            ids.append(tid)
            ts.append(t)
            px.append(p)
            am.append(a)
            mk.append(m)
    finally:
        if owned:
            fh.close()
    return TradeStream(np.array(ids, dtype=np.int64), np.array(ts, dtype=np.int64),
                       np.array(px, dtype=np.float64), np.array(am, dtype=np.float64),
                       np.array(mk, dtype=np.bool_), instrument=instrument)


def write_trades(trades: TradeStream, dest: Union[str, os.PathLike, IO[str]],
                 schema: Mapping[str, str] | None = None) -> None:
    """Write ``trades`` as UTF-8, LF-terminated CSV.

    Floats use ``repr`` so that :func:`read_trades` recovers them exactly.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    owned = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", encoding="utf-8", newline="") if owned else dest
    try:
        fh.write(",".join(schema[f] for f in _FIELDS) + "\n")
        ids = trades.trade_id.tolist()
        ts = trades.timestamp.tolist()
        px = trades.price.tolist()
        am = trades.amount.tolist()
        mk = trades.is_buyer_maker.tolist()
        fh.writelines(f"{i},{t},{p!r},{a!r},{m}\n" for i, t, p, a, m in zip(ids, ts, px, am, mk))
    finally:
        if owned:
            fh.close()


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for :func:`synth_trades`.

    ``regime="random_walk"`` gives a driftless log-price walk with fair-coin
    maker flags. ``regime="planted"`` partitions time into ``block_ms``
    blocks; each block has a random buy/sell pressure, and the price jumps
    by ``jump`` (log units) at the start of the next block in the direction
    given by the realised taker ratio of the current block (up when it is
    at least one half). This makes the sign of the next bar's return a
    deterministic function of the last observed taker ratio.
    """

    regime: str = "random_walk"
    start_ms: int = 1_546_300_800_000
    mean_interarrival_ms: float = 1000.0
    interarrival: str = "exponential"
    price0: float = 7500.0
    volatility: float = 2e-4
    amount_mean: float = 0.05
    amount_sigma: float = 1.0
    first_trade_id: int = 1
    block_ms: int = 60_000
    jump: float = 2e-3
    taker_bias: float = 0.4
    drift: float = 0.0

    @classmethod
    def planted(cls, **kw) -> "SynthConfig":
        """Planted-signal preset with per-trade noise well below the jump."""
        return cls(**{"regime": "planted", "volatility": 2e-5, **kw})

    def check(self) -> None:
        problems = []
        if self.regime not in ("random_walk", "planted"):
            problems.append(f"unknown regime {self.regime!r}")
        if self.interarrival not in ("exponential", "fixed"):
            problems.append(f"unknown interarrival {self.interarrival!r}")
        if not self.mean_interarrival_ms >= 1:
            problems.append("mean_interarrival_ms must be >= 1")
        if self.start_ms <= 0:
            problems.append("start_ms must be positive")
        if not self.price0 > 0:
            problems.append("price0 must be positive")
        if self.volatility < 0 or self.amount_sigma < 0:
            problems.append("volatility and amount_sigma must be non-negative")
        if not self.amount_mean > 0:
            problems.append("amount_mean must be positive")
        if self.block_ms <= 0:
            problems.append("block_ms must be positive")
        if not 0 <= self.taker_bias <= 0.5:
            problems.append("taker_bias must lie in [0, 0.5]")
        if problems:
            raise InvalidConfig("; ".join(problems))


def synth_trades(seed: int, n: int, regime: SynthConfig | None = None,
                 instrument: str = "SYNTH") -> TradeStream:
    """Deterministic synthetic trade stream of length ``n``."""
    cfg = regime or SynthConfig()
    cfg.check()
    if n < 0:
        raise InvalidConfig("n must be non-negative")
    if n == 0:
        return TradeStream.empty(instrument)
    rng = np.random.default_rng(seed)

    if cfg.interarrival == "exponential":
        gaps = np.maximum(1, np.rint(rng.exponential(cfg.mean_interarrival_ms, n))).astype(np.int64)
    else:
        gaps = np.full(n, max(1, int(round(cfg.mean_interarrival_ms))), dtype=np.int64)
    ts = cfg.start_ms + np.cumsum(gaps) - gaps[0]

    # lognormal amounts with the requested mean
    mu = np.log(cfg.amount_mean) - 0.5 * cfg.amount_sigma ** 2
    amount = rng.lognormal(mu, cfg.amount_sigma, n)
    amount = np.maximum(amount, 1e-8)
    noise = rng.standard_normal(n) * cfg.volatility + cfg.drift

    if cfg.regime == "random_walk":
        maker = rng.random(n) < 0.5
        log_p = np.cumsum(noise)
    else:
        block = (ts // cfg.block_ms)
        block -= block[0]
        n_blocks = int(block[-1]) + 1
        pressure = np.where(rng.random(n_blocks) < 0.5, 1.0, -1.0)
        p_taker_buy = 0.5 + cfg.taker_bias * pressure[block]
        maker = rng.random(n) >= p_taker_buy
        buy_vol = np.bincount(block, weights=amount * ~maker, minlength=n_blocks)
        tot_vol = np.bincount(block, weights=amount, minlength=n_blocks)
        direction = np.zeros(n_blocks)
        has = tot_vol > 0
        ratio = np.divide(buy_vol, tot_vol, out=np.full(n_blocks, 0.5), where=has)
        direction[1:] = np.where(has[:-1], np.where(ratio[:-1] >= 0.5, 1.0, -1.0), 0.0)
        level = np.cumsum(direction * cfg.jump)
        log_p = level[block] + np.cumsum(noise)

    price = cfg.price0 * np.exp(log_p - log_p[0])
    ids = cfg.first_trade_id + np.arange(n, dtype=np.int64)
    return TradeStream(ids, ts, price, amount, maker, instrument=instrument)
