"""Out-of-sample evaluation and a costed long/short trading simulation.

Every prediction opens one position at the close of the window's last bar
and closes it ``m`` bars later. Long and short positions are independent:
an opposing signal never nets against an open position. Size is a
constant notional, so the equity curve is a running sum of returns.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bars import BarTable
from .dataset import normalize_window
from .errors import EmptyInput, MissingBar, ModelShapeMismatch, WindowTooLarge
from .neural import LstmModel, loss

DAY_MS = 86_400_000


@dataclass
class EvalResult:
    """Stride-1 predictions over a table.

    ``prediction_index[k]`` is the (exclusive) right edge of window ``k``;
    the position it drives opens at row ``prediction_index[k] - 1``.
    """

    prediction_index: np.ndarray
    probs: np.ndarray
    truth: np.ndarray
    loss: float
    accuracy: float
    truth_balance: float

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def open_index(self) -> np.ndarray:
        return self.prediction_index - 1

    def summary(self) -> dict:
        return {"n_predictions": int(len(self.truth)), "loss": self.loss,
                "accuracy": self.accuracy, "truth_balance_up": self.truth_balance}


def chronological_eval(model: LstmModel, features: np.ndarray, onehot: np.ndarray,
                       valid: np.ndarray, T: int | None = None, chunk: int = 2048) -> EvalResult:
    """Predict at every index ``t`` in ``[T, n]`` whose last row has a label.

    ``features`` is the ``(n, F)`` stationarised table; ``onehot``/``valid``
    are row labels (threshold 0 for out-of-sample use).
    """
    features = np.asarray(features, dtype=np.float64)
    T = model.T if T is None else T
    if features.ndim != 2 or features.shape[1] != model.F:
        raise ModelShapeMismatch(f"table has {features.shape[-1]} features, model expects {model.F}")
    if T != model.T:
        raise ModelShapeMismatch(f"window length {T} differs from model's {model.T}")
    n = len(features)
    t_all = np.arange(T, n + 1)
    t_all = t_all[valid[t_all - 1]] if len(t_all) else t_all
    if len(t_all) == 0:
        raise EmptyInput(f"no labelled window of length {T} in {n} rows")
    views = sliding_window_view(features, T, axis=0)  # (n-T+1, F, T)
    probs = np.empty((len(t_all), 2))
    for i in range(0, len(t_all), chunk):
        starts = t_all[i:i + chunk] - T
        X = normalize_window(np.swapaxes(views[starts], 1, 2))
        probs[i:i + chunk] = model.predict(X)
    Y = onehot[t_all - 1]
    truth = np.argmax(Y, axis=1)
    acc = float(np.mean(np.argmax(probs, axis=1) == truth))
    return EvalResult(t_all, probs, truth, loss(probs, Y), acc, float(np.mean(truth == 0)))


@dataclass
class RollingAccuracy:
    window_bars: int
    series: np.ndarray
    histogram: dict = field(default_factory=dict)


def rolling_accuracy(predictions, truths, window_bars: int, bins: int = 20) -> RollingAccuracy:
    """Trailing-window hit rate; NaN until the first full window."""
    pred = np.asarray(predictions)
    truth = np.asarray(truths)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    if truth.ndim == 2:
        truth = np.argmax(truth, axis=1)
    if pred.shape != truth.shape:
        raise ValueError("predictions and truths are not aligned")
    n = len(pred)
    if window_bars <= 0 or window_bars > n:
        raise WindowTooLarge(f"window of {window_bars} bars for {n} predictions")
    hits = np.concatenate(([0], np.cumsum(pred == truth)))
    series = np.full(n, np.nan)
    series[window_bars - 1:] = (hits[window_bars:] - hits[:-window_bars]) / window_bars
    defined = series[window_bars - 1:]
    counts, edges = np.histogram(defined, bins=bins, range=(0.0, 1.0))
    hist = {"edges": edges.tolist(), "counts": counts.tolist(),
            "mean": float(defined.mean()), "min": float(defined.min()),
            "max": float(defined.max()), "std": float(defined.std())}
    return RollingAccuracy(window_bars, series, hist)


@dataclass(frozen=True)
class Position:
    side: str
    open_index: int
    close_index: int
    open_price: float
    close_price: float
    size: float
    cost_rate: float
    gross_return: float
    cost: float
    net_return: float


@dataclass(eq=False)
class BacktestLedger:
    side: np.ndarray          # +1 long, -1 short
    open_index: np.ndarray
    close_index: np.ndarray
    open_price: np.ndarray
    close_price: np.ndarray
    gross_return: np.ndarray  # per unit notional, before costs
    cost: np.ndarray          # per unit notional
    size: float
    cost_rate: float
    equity_curve: np.ndarray

    def __len__(self) -> int:
        return len(self.side)

    @property
    def net_return(self) -> np.ndarray:
        return self.gross_return - self.cost

    @property
    def positions(self) -> list[Position]:
        return [Position("long" if s > 0 else "short", int(o), int(c), float(po), float(pc),
                         self.size, self.cost_rate, float(g), float(k), float(g - k))
                for s, o, c, po, pc, g, k in zip(self.side, self.open_index, self.close_index,
                                                 self.open_price, self.close_price,
                                                 self.gross_return, self.cost)]

    def totals(self) -> dict:
        gross = math.fsum((self.gross_return * self.size).tolist())
        cost = math.fsum((self.cost * self.size).tolist())
        net = math.fsum((self.net_return * self.size).tolist())
        up = self.close_price >= self.open_price
        hits = np.where(self.side > 0, up, ~up)
        return {"net_return": net, "gross_return": gross, "total_cost": cost,
                "trade_count": int(len(self)),
                "hit_rate": float(hits.mean()) if len(self) else float("nan")}


def simulate(predictions, open_index, bars: BarTable, m: int, cost_rate: float = 0.0003,
             size: float = 1.0, fill: str = "last", short_mode: str = "ratio") -> BacktestLedger:
    """Open one position per prediction and close it ``m`` bars later.

    ``predictions`` are one-hot rows or class indices (0 = up/long,
    1 = down/short); ``open_index`` are bar positions in ``bars``. Fills use
    the bar's last trade price (``fill="last"``) or its VWAP
    (``fill="vwap"``). Long return is ``close/open - 1``; short return is
    ``open/close - 1`` (``short_mode="ratio"``) or ``-(close/open - 1)``
    (``short_mode="symmetric"``). Each round trip pays ``2 * cost_rate``.
    """
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    opens = np.asarray(open_index, dtype=np.int64)
    if pred.shape != opens.shape:
        raise ValueError("predictions and open_index are not aligned")
    if fill == "last":
        price = bars.last_price
    elif fill == "vwap":
        price = bars.vwap
    else:
        raise ValueError(f"unknown fill policy {fill!r}")
    if short_mode not in ("ratio", "symmetric"):
        raise ValueError(f"unknown short_mode {short_mode!r}")
    closes = opens + m
    n = len(bars)
    if len(opens) and (opens.min() < 0 or closes.max() >= n):
        raise MissingBar(f"positions need bars up to {int(closes.max())}, table has {n}")
    side = np.where(pred == 0, 1, -1).astype(np.int64)
    po = price[opens]
    pc = price[closes]
    long_ret = (pc - po) / po
    short_ret = (po - pc) / pc if short_mode == "ratio" else -long_ret
    gross = np.where(side > 0, long_ret, short_ret)
    cost = np.full(len(opens), 2.0 * cost_rate)
    equity = np.cumsum(np.bincount(closes, weights=(gross - cost) * size, minlength=n)[:n])
    return BacktestLedger(side, opens, closes, po, pc, gross, cost, size, cost_rate, equity)


def max_drawdown(curve: np.ndarray) -> float:
    """Largest drop from a running peak of an additive equity curve that
    starts at zero."""
    c = np.asarray(curve, dtype=np.float64)
    if len(c) == 0:
        return 0.0
    peak = np.maximum.accumulate(np.maximum(c, 0.0))
    return float(np.max(peak - c))


def compare_benchmark(ledger: BacktestLedger, bars: BarTable, fill: str = "last") -> dict:
    """Strategy equity against buy-and-hold over the same bars."""
    price = bars.last_price if fill == "last" else bars.vwap
    bench = (price - price[0]) / price[0] if len(price) else np.empty(0)
    strat = ledger.equity_curve
    return {
        "strategy_equity": strat,
        "benchmark_equity": bench,
        "strategy_return": float(strat[-1]) if len(strat) else 0.0,
        "benchmark_return": float(bench[-1]) if len(bench) else 0.0,
        "strategy_max_drawdown": max_drawdown(strat),
        "benchmark_max_drawdown": max_drawdown(bench),
    }


# ---------------------------------------------------------------------------
# output


def write_ledger_csv(ledger: BacktestLedger, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "open_index", "close_index", "open_price", "close_price", "size",
                    "gross_return", "cost", "net_return"])
        for p in ledger.positions:
            w.writerow([p.side, p.open_index, p.close_index, repr(p.open_price),
                        repr(p.close_price), repr(p.size), repr(p.gross_return), repr(p.cost),
                        repr(p.net_return)])


def write_equity_csv(report: dict, bars: BarTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bar", "group_index", "strategy_equity", "benchmark_equity"])
        for i, (g, s, b) in enumerate(zip(bars.group_index.tolist(),
                                          report["strategy_equity"].tolist(),
                                          report["benchmark_equity"].tolist())):
            w.writerow([i, g, repr(s), repr(b)])


def write_json(doc: dict, path: str | os.PathLike) -> None:
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=conv)
        fh.write("\n")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "ticklstm"
    return plt


def plot_equity_svg(report: dict, path: str | os.PathLike, title: str = "") -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(report["strategy_equity"], label="strategy", lw=1)
    ax.plot(report["benchmark_equity"], label="buy and hold", lw=1)
    ax.set_xlabel("bar")
    ax.set_ylabel("cumulative return")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_rolling_histogram_svg(roll: RollingAccuracy, path: str | os.PathLike) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    edges = np.asarray(roll.histogram["edges"])
    ax.bar(edges[:-1], roll.histogram["counts"], width=np.diff(edges), align="edge",
           edgecolor="black", lw=0.5)
    ax.set_xlabel(f"rolling accuracy ({roll.window_bars} bars)")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
