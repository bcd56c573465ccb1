"""Experiment stages over a work directory.

Each stage reads the artifacts of earlier stages, writes its own
directory and finishes it with ``manifest.json``::

    {"stage", "tool_version", "config_hash", "config", "inputs", "outputs"}

``inputs`` and ``outputs`` map work-directory-relative paths to SHA-256
digests, so the manifests chain from the report back to the raw trades
and never contain timestamps or absolute paths. Re-running a stage whose
config, inputs and outputs are unchanged is a no-op.

Layout::

    trades/    trades.csv
    bars/      bars.bin, bars.csv
    adf/       report.json
    split/     train.bin, val.bin, split.json
    model/     model.bin, history.csv, train.json
    grid/      results.csv, results.json, table.txt
    evaluate/  predictions.csv, eval_bars.bin, metrics.json
    backtest/  ledger.csv, equity.csv, summary.json
    report/    summary.json, equity.svg, rolling_accuracy.svg, learning_curve.svg
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import backtest as bt
from ._version import __version__
from .bars import BarConfig, BarTable, LabelConfig, forward_returns, labels, make_bars, \
    read_bars_bin, write_bars_bin, write_bars_csv
from .config import ExperimentConfig
from .dataset import SplitConfig, build_examples, make_split, read_examples, write_examples
from .errors import EmptyInput, MissingArtifact
from .fetch import ExchangeConfig, TradeFetcher
from .neural import LstmModel, load_model, save_model, train, write_history
from .search import GridSpec, run_grid
from .stationarity import FeatureTable, apply_differencing, stationarize
from .trades import SynthConfig, read_trades, synth_trades, write_trades

logger = logging.getLogger(__name__)

CACHE_ENV = "TICKLSTM_CACHE_DIR"
MANIFEST = "manifest.json"

#: config sections each stage depends on
STAGE_SECTIONS = {
    "trades": ("data", "synth", "fetch"),
    "bars": ("data", "bars"),
    "adf": ("bars", "label", "stationarity", "split"),
    "split": ("bars", "label", "stationarity", "split", "model"),
    "train": ("model", "train"),
    "grid": ("bars", "label", "stationarity", "split", "grid", "train"),
    "evaluate": ("bars", "label", "backtest", "split"),
    "backtest": ("label", "backtest"),
    "report": ("backtest",),
}


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# shared data preparation (also used directly by tests and demos)


def rebase(bars: BarTable, horizons) -> BarTable:
    """Recompute forward returns inside ``bars`` only, so no label looks
    past the end of the slice."""
    return forward_returns(replace(bars, fwd_return={}), horizons)


def dev_holdout(bars: BarTable, holdout_fraction: float,
                horizons) -> tuple[BarTable, BarTable]:
    """Chronological development / out-of-sample split of a bar table."""
    n_dev = int(len(bars) * (1.0 - holdout_fraction))
    return rebase(bars.slice(0, n_dev), horizons), rebase(bars.slice(n_dev, None), horizons)


@dataclass
class Prepared:
    """Stationarised features with row-aligned labels."""

    table: FeatureTable
    onehot: np.ndarray
    valid: np.ndarray
    report: list[dict]

    @property
    def n_usable(self) -> int:
        idx = np.flatnonzero(self.valid)
        return int(idx[-1]) + 1 if len(idx) else 0


def prepare(bars: BarTable, horizon_m: int, epsilon: float = 0.0,
            significance: float = 0.10, differenced=None) -> Prepared:
    """Stationarise ``bars`` (or apply known ``differenced`` columns) and
    attach labels for horizon ``horizon_m``."""
    if differenced is None:
        table, report = stationarize(bars, significance=significance)
    else:
        table, report = apply_differencing(FeatureTable.from_bars(bars), differenced), []
    onehot, valid = labels(bars, LabelConfig(horizon_m, epsilon))
    return Prepared(table, onehot[table.bar_index], valid[table.bar_index], report)


def prepare_dev(bars: BarTable, cfg: ExperimentConfig) -> Prepared:
    dev, _ = dev_holdout(bars, cfg.split.holdout_fraction, cfg.bars.horizons)
    return prepare(dev, cfg.label.horizon_m, cfg.label.epsilon, cfg.stationarity.significance)


def split_config(cfg: ExperimentConfig) -> SplitConfig:
    return SplitConfig(cfg.split.p, cfg.split.q, cfg.split.seed)


def rolling_window(cfg: ExperimentConfig) -> int:
    return cfg.backtest.rolling_window_bars or max(1, bt.DAY_MS // cfg.bars.interval_ms)


# ---------------------------------------------------------------------------
# work directory


class Workspace:
    """A work directory plus the experiment config that drives it."""

    def __init__(self, workdir: str | os.PathLike, cfg: ExperimentConfig,
                 cache_dir: str | os.PathLike | None = None):
        self.root = Path(workdir)
        self.cfg = cfg
        env = os.environ.get(CACHE_ENV)
        self.cache_dir = Path(cache_dir or env or self.root / "cache")

    # -- bookkeeping --------------------------------------------------------

    def path(self, rel: str) -> Path:
        return self.root / rel

    def _rel(self, p: Path) -> str:
        return p.relative_to(self.root).as_posix()

    def _hashes(self, paths) -> dict[str, str]:
        out = {}
        for p in paths:
            p = Path(p)
            try:
                key = self._rel(p)
            except ValueError:
                key = f"external/{p.name}"
            out[key] = sha256_file(p)
        return dict(sorted(out.items()))

    def _config_doc(self, stage: str, extra: dict | None) -> dict:
        full = self.cfg.to_dict()
        doc = {s: full[s] for s in STAGE_SECTIONS[stage]}
        if extra:
            doc["options"] = extra
        return doc

    def _require(self, stage_dir: str, upstream: str, *names: str) -> list[Path]:
        paths = [self.path(f"{stage_dir}/{n}") for n in names]
        if not self.path(f"{stage_dir}/{MANIFEST}").exists() or not all(p.exists() for p in paths):
            raise MissingArtifact(upstream)
        return paths

    def _up_to_date(self, out_dir: str, stage: str, inputs, extra=None) -> dict | None:
        mpath = self.path(f"{out_dir}/{MANIFEST}")
        if not mpath.exists():
            return None
        with open(mpath, encoding="utf-8") as fh:
            old = json.load(fh)
        cfg_doc = self._config_doc(stage, extra)
        if old.get("config") != cfg_doc or old.get("tool_version") != __version__:
            return None
        if old.get("inputs") != self._hashes(inputs):
            return None
        for rel, digest in old.get("outputs", {}).items():
            p = self.path(rel)
            if not p.exists() or sha256_file(p) != digest:
                return None
        logger.info("%s is up to date", out_dir)
        return old

    def _finish(self, out_dir: str, stage: str, inputs, outputs, extra=None) -> dict:
        cfg_doc = self._config_doc(stage, extra)
        doc = {
            "stage": stage,
            "tool_version": __version__,
            "config_hash": hashlib.sha256(
                json.dumps(cfg_doc, sort_keys=True).encode()).hexdigest(),
            "config": cfg_doc,
            "inputs": self._hashes(inputs),
            "outputs": self._hashes(outputs),
        }
        with open(self.path(f"{out_dir}/{MANIFEST}"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return doc

    def _dir(self, name: str) -> Path:
        d = self.path(name)
        d.mkdir(parents=True, exist_ok=True)
        return d

    # -- stages -------------------------------------------------------------

    def synth(self) -> dict:
        s = self.cfg.synth
        if (m := self._up_to_date("trades", "trades", [], {"source": "synth"})):
            return m
        regime = SynthConfig(regime=s.regime, mean_interarrival_ms=s.mean_interarrival_ms,
                             volatility=s.volatility, jump=s.jump, taker_bias=s.taker_bias,
                             block_ms=s.block_ms)
        trades = synth_trades(s.seed, s.n, regime, instrument=self.cfg.data.instrument)
        out = self._dir("trades") / "trades.csv"
        write_trades(trades, out)
        return self._finish("trades", "trades", [], [out], {"source": "synth"})

    def fetch(self, session=None, sleep=None) -> dict:
        f = self.cfg.fetch
        ex = ExchangeConfig.from_file(f.exchange_config) if f.exchange_config else ExchangeConfig()
        if not ex.cache_dir:
            ex = replace(ex, cache_dir=str(self.cache_dir / "pages"))
        extra = {"source": "fetch", "exchange": {k: v for k, v in asdict(ex).items()
                                                 if k != "cache_dir"}}
        if (m := self._up_to_date("trades", "trades", [], extra)):
            return m
        kwargs = {k: v for k, v in (("session", session), ("sleep", sleep)) if v is not None}
        fetcher = TradeFetcher(ex, base_url=f.endpoint, **kwargs)
        trades = fetcher.fetch(self.cfg.data.instrument, f.start_ms, f.end_ms)
        if len(trades) == 0:
            raise EmptyInput("the exchange returned no trades for the requested range")
        out = self._dir("trades") / "trades.csv"
        write_trades(trades, out)
        return self._finish("trades", "trades", [], [out], extra)

    def _trades_source(self) -> Path:
        if self.cfg.data.source == "file":
            return Path(self.cfg.data.trades_path)
        (p,) = self._require("trades", "fetch" if self.cfg.data.source == "fetch" else "synth",
                             "trades.csv")
        return p

    def resample(self) -> dict:
        src = self._trades_source()
        if (m := self._up_to_date("bars", "bars", [src])):
            return m
        trades = read_trades(src, instrument=self.cfg.data.instrument)
        bars = make_bars(trades, BarConfig(self.cfg.bars.interval_ms, self.cfg.bars.horizons))
        d = self._dir("bars")
        write_bars_bin(bars, d / "bars.bin")
        write_bars_csv(bars, d / "bars.csv")
        return self._finish("bars", "bars", [src], [d / "bars.bin", d / "bars.csv"])

    def _bars(self) -> tuple[Path, BarTable]:
        (p,) = self._require("bars", "resample", "bars.bin")
        return p, read_bars_bin(p)

    def adf(self) -> dict:
        p, bars = self._bars()
        if (m := self._up_to_date("adf", "adf", [p])):
            return m
        prep = prepare_dev(bars, self.cfg)
        out = self._dir("adf") / "report.json"
        bt.write_json({"columns": prep.report, "differenced": list(prep.table.differenced),
                       "n_rows": len(prep.table)}, out)
        return self._finish("adf", "adf", [p], [out])

    def split(self) -> dict:
        p, bars = self._bars()
        if (m := self._up_to_date("split", "split", [p])):
            return m
        cfg = self.cfg
        prep = prepare_dev(bars, cfg)
        sc = split_config(cfg)
        periods = make_split(prep.n_usable, sc, cfg.model.T)
        tr, va, info = build_examples(prep.table.values, prep.onehot, prep.valid, periods,
                                      cfg.model.T, cfg.split.fraction, cfg.split.seed)
        if len(tr) == 0 or len(va) == 0:
            raise EmptyInput(f"split produced {len(tr)} training and {len(va)} validation "
                             "examples")
        d = self._dir("split")
        write_examples(tr, d / "train.bin", {"kind_set": "training"})
        write_examples(va, d / "val.bin", {"kind_set": "validation"})
        doc = {"split": asdict(sc), "periods": [asdict(x) for x in periods],
               "differenced": list(prep.table.differenced), "adf": prep.report,
               "feature_names": list(prep.table.names), **info}
        bt.write_json(doc, d / "split.json")
        return self._finish("split", "split", [p],
                            [d / "train.bin", d / "val.bin", d / "split.json"])

    def train(self) -> dict:
        paths = self._require("split", "split", "train.bin", "val.bin", "split.json")
        if (m := self._up_to_date("model", "train", paths)):
            return m
        tr, va = read_examples(paths[0]), read_examples(paths[1])
        with open(paths[2], encoding="utf-8") as fh:
            info = json.load(fh)
        res = train(tr.X, tr.Y, va.X, va.Y, self.cfg.model.N, self.cfg.train)
        model = LstmModel(res.params, self.cfg.model.T, self.cfg.bars.interval_ms,
                          self.cfg.label.horizon_m, tuple(info["feature_names"]),
                          tuple(info["differenced"]),
                          {"instrument": self.cfg.data.instrument,
                           "epsilon": self.cfg.label.epsilon})
        d = self._dir("model")
        save_model(model, d / "model.bin")
        write_history(res.history, d / "history.csv")
        bt.write_json({"best_epoch": res.best_epoch, "stop_reason": res.stop_reason,
                       "epochs_run": len(res.history), "best_val_loss": res.best_val_loss,
                       "best_val_acc": res.best_val_acc,
                       "n_train": len(tr), "n_val": len(va)}, d / "train.json")
        return self._finish("model", "train", paths,
                            [d / "model.bin", d / "history.csv", d / "train.json"])

    def grid(self, on_cell=None) -> dict:
        p, bars = self._bars()
        if (m := self._up_to_date("grid", "grid", [p])):
            return m
        cfg = self.cfg
        prep = prepare_dev(bars, cfg)
        spec = GridSpec(cfg.bars.interval_ms, cfg.label.horizon_m, cfg.grid.T_values,
                        cfg.grid.N_values, split_config(cfg), cfg.split.fraction, cfg.train)
        data_key = hashlib.sha256(
            (sha256_file(p) + json.dumps(self._config_doc("grid", None), sort_keys=True))
            .encode()).hexdigest()
        result = run_grid(prep.table.values, prep.onehot, prep.valid, spec,
                          cache_dir=self.cache_dir / "grid", data_key=data_key, on_cell=on_cell)
        d = self._dir("grid")
        result.write_csv(d / "results.csv")
        w = result.winner
        bt.write_json({"cells": result.table(), "winner": {"T": w.T, "N": w.N} if w else None},
                      d / "results.json")
        (d / "table.txt").write_text(result.render() + "\n", encoding="utf-8")
        return self._finish("grid", "grid", [p],
                            [d / "results.csv", d / "results.json", d / "table.txt"])

    def evaluate(self, trades_path: str | os.PathLike | None = None, tag: str = "") -> dict:
        """Stride-1 predictions over the out-of-sample bars.

        Without ``trades_path`` the held-out tail of this run's bars is
        used; with it, every bar resampled from that trade file is (a
        cross-instrument test). Labels use ``label.eval_epsilon``.
        """
        cfg = self.cfg
        (mpath,) = self._require("model", "train", "model.bin")
        out_dir = f"evaluate-{tag}" if tag else "evaluate"
        if trades_path is not None:
            inputs = [mpath, Path(trades_path)]
        else:
            bpath, _ = self._bars()
            inputs = [mpath, bpath]
        extra = {"tag": tag, "external_trades": trades_path is not None}
        if (m := self._up_to_date(out_dir, "evaluate", inputs, extra)):
            return m
        model = load_model(mpath)
        if trades_path is not None:
            hold = make_bars(read_trades(trades_path),
                             BarConfig(model.interval_ms, (model.horizon_m,)))
        else:
            _, bars = self._bars()
            _, hold = dev_holdout(bars, cfg.split.holdout_fraction, cfg.bars.horizons)
        prep = prepare(hold, model.horizon_m, cfg.label.eval_epsilon,
                       differenced=model.differenced)
        res = bt.chronological_eval(model, prep.table.values, prep.onehot, prep.valid)
        window = min(rolling_window(cfg), len(res.truth))
        roll = bt.rolling_accuracy(res.predicted, res.truth, window)
        open_bar = prep.table.bar_index[res.open_index]

        d = self._dir(out_dir)
        write_bars_bin(hold, d / "eval_bars.bin")
        with open(d / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["prediction_index", "open_bar", "prob_up", "prob_down", "predicted",
                        "truth", "rolling_accuracy"])
            for row in zip(res.prediction_index.tolist(), open_bar.tolist(),
                           res.probs[:, 0].tolist(), res.probs[:, 1].tolist(),
                           res.predicted.tolist(), res.truth.tolist(), roll.series.tolist()):
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], row[5],
                            "" if np.isnan(row[6]) else repr(row[6])])
        bt.write_json({**res.summary(), "rolling_window_bars": window,
                       "rolling_histogram": roll.histogram, "horizon_m": model.horizon_m,
                       "differenced": list(model.differenced)}, d / "metrics.json")
        return self._finish(out_dir, "evaluate", inputs,
                            [d / "eval_bars.bin", d / "predictions.csv", d / "metrics.json"],
                            extra)

    def backtest(self, tag: str = "") -> dict:
        src = f"evaluate-{tag}" if tag else "evaluate"
        paths = self._require(src, "evaluate", "predictions.csv", "eval_bars.bin",
                              "metrics.json")
        out_dir = f"backtest-{tag}" if tag else "backtest"
        extra = {"tag": tag}
        if (m := self._up_to_date(out_dir, "backtest", paths, extra)):
            return m
        pred, open_bar = read_predictions(paths[0])
        bars = read_bars_bin(paths[1])
        with open(paths[2], encoding="utf-8") as fh:
            m = int(json.load(fh)["horizon_m"])
        b = self.cfg.backtest
        ledger = bt.simulate(pred, open_bar, bars, m, b.cost_rate, b.size, b.fill, b.short_mode)
        report = bt.compare_benchmark(ledger, bars, b.fill)
        d = self._dir(out_dir)
        bt.write_ledger_csv(ledger, d / "ledger.csv")
        bt.write_equity_csv(report, bars, d / "equity.csv")
        summary = {**ledger.totals(),
                   **{k: v for k, v in report.items() if not k.endswith("_equity")},
                   "cost_rate": b.cost_rate, "fill": b.fill, "short_mode": b.short_mode,
                   "size": b.size, "horizon_m": m}
        bt.write_json(summary, d / "summary.json")
        return self._finish(out_dir, "backtest", paths,
                            [d / "ledger.csv", d / "equity.csv", d / "summary.json"], extra)

    def report(self, tag: str = "") -> dict:
        ev = f"evaluate-{tag}" if tag else "evaluate"
        bk = f"backtest-{tag}" if tag else "backtest"
        ev_paths = self._require(ev, "evaluate", "metrics.json", "predictions.csv")
        bk_paths = self._require(bk, "backtest", "summary.json", "equity.csv")
        hist = self.path("model/history.csv")
        train_json = self.path("model/train.json")
        optional = [p for p in (hist, train_json) if p.exists()]
        inputs = ev_paths + bk_paths + optional
        out_dir = f"report-{tag}" if tag else "report"
        extra = {"tag": tag}
        if (m := self._up_to_date(out_dir, "report", inputs, extra)):
            return m
        with open(ev_paths[0], encoding="utf-8") as fh:
            metrics = json.load(fh)
        with open(bk_paths[0], encoding="utf-8") as fh:
            summary = json.load(fh)
        doc = {"evaluation": metrics, "backtest": summary}
        if train_json.exists():
            with open(train_json, encoding="utf-8") as fh:
                doc["training"] = json.load(fh)
        d = self._dir(out_dir)
        bt.write_json(doc, d / "summary.json")
        strat, bench = read_equity(bk_paths[1])
        bt.plot_equity_svg({"strategy_equity": strat, "benchmark_equity": bench},
                           d / "equity.svg", self.cfg.data.instrument)
        roll = bt.RollingAccuracy(metrics["rolling_window_bars"], np.empty(0),
                                  metrics["rolling_histogram"])
        bt.plot_rolling_histogram_svg(roll, d / "rolling_accuracy.svg")
        outputs = [d / "summary.json", d / "equity.svg", d / "rolling_accuracy.svg"]
        if hist.exists():
            plot_learning_curve_svg(hist, d / "learning_curve.svg")
            outputs.append(d / "learning_curve.svg")
        return self._finish(out_dir, "report", inputs, outputs, extra)


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    pred = np.array([int(r["predicted"]) for r in rows], dtype=np.int64)
    open_bar = np.array([int(r["open_bar"]) for r in rows], dtype=np.int64)
    return pred, open_bar


def read_equity(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["strategy_equity"]) for r in rows]),
            np.array([float(r["benchmark_equity"]) for r in rows]))


def plot_learning_curve_svg(history_csv, path) -> None:
    with open(history_csv, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    plt = bt._figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ep = [int(r["epoch"]) for r in rows]
    ax.plot(ep, [float(r["train_loss"]) for r in rows], label="training", lw=1)
    ax.plot(ep, [float(r["val_loss"]) for r in rows], label="validation", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_all(ws: Workspace) -> dict:
    """``synth|fetch → resample → split → train → evaluate → backtest → report``."""
    src = ws.cfg.data.source
    if src == "synth":
        ws.synth()
    elif src == "fetch":
        ws.fetch()
    ws.resample()
    ws.adf()
    ws.split()
    ws.train()
    ws.evaluate()
    ws.backtest()
    return ws.report()


__all__ = ["Workspace", "Prepared", "prepare", "prepare_dev", "dev_holdout", "rebase",
           "run_all", "CACHE_ENV"]
