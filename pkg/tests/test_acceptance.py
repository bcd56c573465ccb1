"""End-to-end acceptance checks, one test per criterion.

A summary line per criterion is printed at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest

from oracles import brute_force_bars, compare_bars, gradient_check
from ticklstm import neural
from ticklstm.backtest import simulate
from ticklstm.bars import BarConfig, LabelConfig, forward_returns, labels, resample
from ticklstm.config import load_config
from ticklstm.dataset import TRAINING, VALIDATION, SplitConfig, build_examples, make_split, \
    shuffle_labels
from ticklstm.neural import EarlyStopping, TrainConfig, init_params, load_model, save_model, \
    train
from ticklstm.pipeline import Workspace, prepare, prepare_dev, run_all, split_config
from ticklstm.search import GridSpec, run_grid, select_winner
from ticklstm.stationarity import FeatureTable, adf_test, stationarize
from ticklstm.trades import SynthConfig, Trade, TradeStream, synth_trades


# 1 -------------------------------------------------------------------------

def test_criterion_01_resampling_oracle_equivalence():
    trades = synth_trades(2024, 1_000_000, SynthConfig(mean_interarrival_ms=250.0))
    start = time.perf_counter()
    bars = resample(trades, BarConfig(60_000))
    elapsed = time.perf_counter() - start
    assert compare_bars(bars, brute_force_bars(trades, 60_000), rel=1e-9) == []
    assert elapsed < 10.0, f"resample took {elapsed:.1f}s"


# 2 -------------------------------------------------------------------------

def test_criterion_02_hand_summed_bar(five_trades):
    bars = resample(five_trades, BarConfig(60_000))
    assert len(bars) == 1
    b = bars[0]
    amounts = [0.042720, 0.004960, 0.100000, 0.074690, 0.015895]
    assert b.n_trades == 5
    assert b.volume == math.fsum(amounts) == 0.238265
    assert b.active_buy_volume == math.fsum([amounts[0], amounts[2], amounts[4]]) == 0.158615
    assert b.amplitude == 7457.22 - 7457.14
    assert b.price_change == 7457.22 - 7457.18
    assert round(b.amplitude, 10) == 0.08
    assert round(b.price_change, 10) == 0.04


# 3 -------------------------------------------------------------------------

def test_criterion_03_gradient_check():
    rng = np.random.default_rng(31337)
    start = time.perf_counter()
    worst = []
    for _ in range(24):
        T, N, B = int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
        p = init_params(N, 7, rng)
        for _, a in p.items():
            a += rng.normal(0.0, 0.3, a.shape)
        X = rng.standard_normal((B, T, 7))
        Y = np.eye(2)[rng.integers(0, 2, B)]
        mask = rng.random((B, N)) < 0.5
        worst.append(gradient_check(p, X, Y, mask, h=1e-5))
    elapsed = time.perf_counter() - start
    assert max(worst) <= 1e-4, f"worst relative error {max(worst):.3g}"
    assert elapsed < 60.0


# 4 -------------------------------------------------------------------------

def test_criterion_04_learnability_and_shuffled_control(planted_bars):
    cfg = load_config()
    assert (cfg.synth.seed, cfg.synth.n, cfg.synth.regime) == (7, 100_000, "planted")
    start = time.perf_counter()
    prep = prepare_dev(planted_bars, cfg)
    periods = make_split(prep.n_usable, split_config(cfg), cfg.model.T)
    tr, va, _ = build_examples(prep.table.values, prep.onehot, prep.valid, periods,
                               cfg.model.T, cfg.split.fraction, cfg.split.seed)
    tcfg = cfg.train
    assert tcfg.max_epochs == 100
    real = train(tr.X, tr.Y, va.X, va.Y, cfg.model.N, tcfg)
    assert real.best_val_acc > 0.90, f"validation accuracy {real.best_val_acc:.3f}"

    tr_s, va_s = shuffle_labels(tr, 1), shuffle_labels(va, 2)
    control = train(tr_s.X, tr_s.Y, va_s.X, va_s.Y, cfg.model.N, tcfg)
    assert control.best_val_loss >= 0.685, f"control loss {control.best_val_loss:.4f}"
    assert time.perf_counter() - start < 30 * 60


# 5 -------------------------------------------------------------------------

def test_criterion_05_no_leakage_and_full_coverage():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 100:
        n = int(rng.integers(100, 3000))
        T = int(rng.integers(1, 30))
        q = T + int(rng.integers(1, 40))
        p = int(rng.integers(1, 15))
        fraction = float(rng.uniform(0.1, 0.5))
        try:
            periods = make_split(n, SplitConfig(p, q, int(rng.integers(2**31))), T)
        except Exception:
            continue
        onehot = np.eye(2)[rng.integers(0, 2, n)]
        valid = np.ones(n, dtype=bool)
        tr, va, _ = build_examples(rng.standard_normal((n, 3)), onehot, valid, periods, T,
                                   fraction, int(rng.integers(2**31)))
        train_rows = np.zeros(n, dtype=bool)
        val_rows = np.zeros(n, dtype=bool)
        for lo, hi in tr.window_ranges():
            train_rows[lo:hi] = True
        for lo, hi in va.window_ranges():
            val_rows[lo:hi] = True
        assert not np.any(train_rows & val_rows)
        for per in periods:
            rows = train_rows if per.kind == TRAINING else val_rows
            assert rows[per.start:per.end].all(), (n, T, q, p, per)
        assert {x.kind for x in periods} >= {VALIDATION}
        checked += 1


# 6 -------------------------------------------------------------------------

def _ar1(phi, e):
    y = np.empty_like(e)
    y[0] = e[0]
    for t in range(1, len(e)):
        y[t] = phi * y[t - 1] + e[t]
    return y


def test_criterion_06_adf_calibration(planted_bars):
    rej_ar = rej_rw = 0
    for i in range(200):
        e = np.random.default_rng([2024, i]).standard_normal(2000)
        rej_ar += adf_test(_ar1(0.5, e), significance=0.05).reject_h0
        rej_rw += adf_test(np.cumsum(e), significance=0.05).reject_h0
    assert rej_ar / 200 >= 0.95, rej_ar
    assert rej_rw / 200 <= 0.20, rej_rw

    rng = np.random.default_rng(6)
    n = 3000
    price = 7500 + np.cumsum(rng.standard_normal(n))
    vol = rng.gamma(2.0, 1.0, n)
    table = FeatureTable(("volume", "price", "ratio"),
                         np.column_stack([vol, price, rng.random(n)]), np.arange(n))
    out, _ = stationarize(table)
    assert out.differenced == ("price",)
    out, _ = stationarize(planted_bars)
    assert out.differenced == ("vwap",)


# 7 -------------------------------------------------------------------------

def _scripted_train(monkeypatch, trace):
    calls = {"n": 0}

    def fake_evaluate(params, X, Y, chunk=4096):
        i = calls["n"]
        calls["n"] += 1
        value = trace[min(i // 2, len(trace) - 1)]
        return value, 0.5, None

    monkeypatch.setattr(neural, "evaluate", fake_evaluate)
    X = np.zeros((4, 2, 3))
    Y = np.eye(2)[[0, 1, 0, 1]]
    return train(X, Y, X, Y, 2, TrainConfig(max_epochs=200))


def test_criterion_07_early_stopping_contract(monkeypatch):
    # patience: minimum at epoch 5, flat afterwards
    trace = [1.0, 0.9, 0.8, 0.7, 0.65, 0.6] + [0.61] * 100
    es = EarlyStopping(20, 1.05)
    stop = next(e for e, v in enumerate(trace) if es.update(e, v))
    assert stop == 5 + 20
    res = _scripted_train(monkeypatch, trace)
    assert (len(res.history) - 1, res.stop_reason, res.best_epoch) == (25, "patience", 5)

    # divergence: first epoch strictly above 1.05 x the minimum (0.6 -> 0.63)
    trace = [1.0, 0.8, 0.6, 0.62, 0.63, 0.6301, 0.5]
    es = EarlyStopping(20, 1.05)
    stop = next(e for e, v in enumerate(trace) if es.update(e, v))
    assert stop == 5
    res = _scripted_train(monkeypatch, trace)
    assert (len(res.history) - 1, res.stop_reason, res.best_epoch) == (5, "divergence", 2)


# 8 -------------------------------------------------------------------------

def _price_bars(prices):
    trades = TradeStream.from_trades(
        [Trade(i + 1, i * 60_000, float(p), 1.0, False) for i, p in enumerate(prices)])
    return forward_returns(resample(trades, BarConfig(60_000, (1,))), [1, 3])


def test_criterion_08_backtest_accounting():
    rng = np.random.default_rng(8)
    bars = _price_bars(100 * np.exp(np.cumsum(rng.normal(0, 0.005, 500))))
    m = 3
    onehot, valid = labels(bars, LabelConfig(m, 0.0))
    idx = np.flatnonzero(valid)
    pred = rng.integers(0, 2, len(idx))

    nets = []
    for c in (0.0, 0.0003, 0.001):
        led = simulate(pred, idx, bars, m, cost_rate=c)
        t = led.totals()
        assert abs(t["net_return"] - (t["gross_return"] - t["total_cost"])) <= \
            1e-12 * max(1.0, abs(t["net_return"]))
        nets.append(t["net_return"])
    assert nets[0] >= nets[1] >= nets[2]

    for fill in ("vwap", "last"):
        perfect = simulate(onehot[idx], idx, bars, m, cost_rate=0.0, fill=fill)
        assert np.all(perfect.net_return >= 0.0)

    worked = simulate([0], [0], _price_bars([100.0, 101.0]), 1, cost_rate=0.0003)
    assert worked.net_return[0] == 0.0094


# 9 -------------------------------------------------------------------------

SMALL_RUN = ["synth.n=60000", "split.p=10", "split.q=30", "train.max_epochs=15"]


def test_criterion_09_determinism_and_persistence(tmp_path):
    cfg = load_config(None, SMALL_RUN)
    for wd in ("a", "b"):
        run_all(Workspace(tmp_path / wd, cfg))
    compared = 0
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_dir() or "cache" in f.parts:
            continue
        rel = f.relative_to(tmp_path / "a")
        assert (tmp_path / "b" / rel).read_bytes() == f.read_bytes(), rel
        compared += 1
    assert compared >= 25
    for must in ("model/model.bin", "backtest/ledger.csv", "model/manifest.json"):
        assert (tmp_path / "a" / must).exists()

    model = load_model(tmp_path / "a" / "model" / "model.bin")
    save_model(model, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == \
        (tmp_path / "a" / "model" / "model.bin").read_bytes()
    back = load_model(tmp_path / "again.bin")
    assert back.params == model.params
    X = np.random.default_rng(9).random((64, model.T, model.F))
    assert np.array_equal(back.predict(X), model.predict(X))


# 10 ------------------------------------------------------------------------

class _Killed(Exception):
    pass


def test_criterion_10_grid_winner_and_resume(planted_bars, tmp_path):
    prep = prepare(planted_bars.slice(0, 1200), 1)
    spec = GridSpec(60_000, 1, (5, 10), (8, 16), SplitConfig(p=8, q=30, seed=3), 0.5,
                    TrainConfig(max_epochs=20, seed=2))
    args = (prep.table.values, prep.onehot, prep.valid, spec)

    full = run_grid(*args, cache_dir=tmp_path / "full")
    assert len(full.cells) == 4
    ok = [c for c in full.cells if c.status == "ok"]
    best = min(c.best_val_loss for c in ok)
    tied = sorted((c for c in ok if c.best_val_loss == best), key=lambda c: (c.N, c.T))
    assert full.winner is tied[0]
    assert select_winner(list(reversed(full.cells))) == full.winner

    seen = []

    def kill_after_one(cell):
        seen.append(cell)
        raise _Killed

    with pytest.raises(_Killed):
        run_grid(*args, cache_dir=tmp_path / "resume", on_cell=kill_after_one)
    resumed = run_grid(*args, cache_dir=tmp_path / "resume")
    assert resumed.table() == full.table()
    assert (resumed.winner.T, resumed.winner.N) == (full.winner.T, full.winner.N)
