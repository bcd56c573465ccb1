"""Window-length x hidden-size search with an on-disk cell cache.

Trains every (T, N) cell, prints the ranked table, then interrupts a
second search after one cell and resumes it from the cache to show the
result is identical.

    python3 demos/grid_search.py
"""

import tempfile
from pathlib import Path

from ticklstm.bars import BarConfig, make_bars
from ticklstm.dataset import SplitConfig
from ticklstm.neural import TrainConfig
from ticklstm.pipeline import prepare
from ticklstm.search import GridSpec, run_grid
from ticklstm.trades import SynthConfig, synth_trades


class Interrupted(Exception):
    pass


def main() -> None:
    bars = make_bars(synth_trades(7, 100_000, SynthConfig.planted()), BarConfig(60_000, (1,)))
    prep = prepare(bars, horizon_m=1)
    spec = GridSpec(60_000, 1, (5, 10), (8, 16), SplitConfig(p=20, q=30, seed=7), 0.5,
                    TrainConfig(max_epochs=30))
    args = (prep.table.values, prep.onehot, prep.valid, spec)
    cache = Path(tempfile.mkdtemp(prefix="ticklstm-grid-"))

    full = run_grid(*args, cache_dir=cache / "a")
    print(full.render())
    print(f"winner: T={full.winner.T} N={full.winner.N}\n")

    def stop(cell):
        print(f"  finished T={cell.T} N={cell.N}; simulating a crash")
        raise Interrupted

    try:
        run_grid(*args, cache_dir=cache / "b", on_cell=stop)
    except Interrupted:
        pass
    resumed = run_grid(*args, cache_dir=cache / "b")
    print("resumed table identical:", resumed.table() == full.table())


if __name__ == "__main__":
    main()
