"""Unit-root testing on bar features.

Shows the augmented Dickey-Fuller test on a stationary AR(1) series and a
random walk, then lets ``stationarize`` decide which bar features need
first differences.

    python3 demos/adf_walkthrough.py
"""

import numpy as np

from ticklstm.bars import BarConfig, make_bars
from ticklstm.stationarity import adf_test, stationarize
from ticklstm.trades import SynthConfig, synth_trades


def show(name, res):
    crit = ", ".join(f"{k}: {v:.3f}" for k, v in res.critical_values.items())
    print(f"{name:12s} stat={res.test_statistic:8.3f}  p={res.p_value:.4f}  lags={res.n_lags:2d}  "
          f"reject={res.reject_h0}  [{crit}]")


def main() -> None:
    e = np.random.default_rng(0).standard_normal(2000)
    ar = np.empty_like(e)
    ar[0] = e[0]
    for t in range(1, len(e)):
        ar[t] = 0.5 * ar[t - 1] + e[t]
    show("AR(1) 0.5", adf_test(ar, significance=0.05))
    show("random walk", adf_test(np.cumsum(e), significance=0.05))

    bars = make_bars(synth_trades(7, 100_000, SynthConfig.planted()), BarConfig(60_000, (1,)))
    table, report = stationarize(bars, significance=0.10)
    print(f"\n{len(bars)} one-minute bars; per-feature decision at 10%:")
    for row in report:
        print(f"  {row['column']:18s} stat={row['statistic']:8.3f}  p={row['p_value']:.4f}  "
              f"{row['decision']}")
    print("differenced:", table.differenced)


if __name__ == "__main__":
    main()
