"""Resumable grid search over window length T and hidden units N."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import SplitConfig, build_examples, make_split
from .errors import TickLstmError
from .neural import TrainConfig, train

logger = logging.getLogger(__name__)

#: Grids searched for one-minute and five-minute bars.
STANDARD_GRIDS = {
    60_000: {"T_values": (100, 300, 1000, 2000), "N_values": (16, 32, 64, 128)},
    300_000: {"T_values": (60, 300, 500, 1000), "N_values": (16, 32, 64, 128)},
}


@dataclass(frozen=True)
class GridSpec:
    l: int
    m: int
    T_values: tuple[int, ...]
    N_values: tuple[int, ...]
    split: SplitConfig
    fraction: float = 0.25
    train: TrainConfig = TrainConfig()
    overrides: dict = field(default_factory=dict)

    def cells(self) -> list[tuple[int, int]]:
        return [(T, N) for T in self.T_values for N in self.N_values]

    def cell_train_config(self, T: int, N: int) -> TrainConfig:
        return replace(self.train, **self.overrides.get((T, N), {}))


@dataclass
class CellResult:
    T: int
    N: int
    best_val_loss: float
    best_val_acc: float
    epochs_run: int
    wall_time: float
    status: str = "ok"
    error: str = ""

    def row(self) -> dict:
        """Deterministic columns (everything except wall time)."""
        d = asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class GridResult:
    cells: list[CellResult]

    @property
    def winner(self) -> CellResult | None:
        return select_winner(self.cells)

    def table(self) -> list[dict]:
        return [c.row() for c in self.cells]

    def ranked(self) -> list[CellResult]:
        ok = [c for c in self.cells if c.status == "ok"]
        return sorted(ok, key=lambda c: (c.best_val_loss, c.N, c.T))

    def render(self) -> str:
        lines = [f"{'rank':>4} {'T':>6} {'N':>5} {'val_loss':>10} {'val_acc':>8} {'epochs':>6}"]
        for i, c in enumerate(self.ranked(), 1):
            lines.append(f"{i:>4} {c.T:>6} {c.N:>5} {c.best_val_loss:>10.4f} "
                         f"{c.best_val_acc:>8.2%} {c.epochs_run:>6}")
        for c in self.cells:
            if c.status != "ok":
                lines.append(f"   - {c.T:>6} {c.N:>5} failed: {c.error}")
        return "\n".join(lines)

    def write_csv(self, path: str | os.PathLike) -> None:
        rows = self.table()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["T", "N"],
                               lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    def write_json(self, path: str | os.PathLike) -> None:
        w = self.winner
        doc = {"cells": [asdict(c) for c in self.cells],
               "winner": {"T": w.T, "N": w.N} if w else None}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def select_winner(cells: Sequence[CellResult]) -> CellResult | None:
    """Minimum validation loss; ties go to smaller N, then smaller T."""
    ok = [c for c in cells if c.status == "ok"]
    return min(ok, key=lambda c: (c.best_val_loss, c.N, c.T)) if ok else None


def cell_key(data_key: str, spec: GridSpec, T: int, N: int) -> str:
    doc = {"data": data_key, "l": spec.l, "m": spec.m, "T": T, "N": N,
           "split": asdict(spec.split), "fraction": spec.fraction,
           "train": asdict(spec.cell_train_config(T, N))}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def run_cell(features: np.ndarray, onehot: np.ndarray, valid: np.ndarray, spec: GridSpec,
             T: int, N: int, n_usable: int | None = None) -> CellResult:
    start = time.perf_counter()
    n_usable = int(valid.nonzero()[0].max()) + 1 if n_usable is None else n_usable
    periods = make_split(n_usable, spec.split, T)
    tr, va, _ = build_examples(features, onehot, valid, periods, T, spec.fraction,
                               spec.split.seed)
    res = train(tr.X, tr.Y, va.X, va.Y, N, spec.cell_train_config(T, N))
    return CellResult(T, N, res.best_val_loss, res.best_val_acc, len(res.history),
                      time.perf_counter() - start)


def run_grid(features: np.ndarray, onehot: np.ndarray, valid: np.ndarray, spec: GridSpec,
             cache_dir: str | os.PathLike | None = None, data_key: str = "",
             on_cell: Callable[[CellResult], None] | None = None) -> GridResult:
    """Train one model per (T, N) cell on a shared split.

    Finished cells are written to ``cache_dir`` (one JSON file per content
    hash of data key and cell config) and reused on the next call, so an
    interrupted grid resumes where it stopped. A failing cell is recorded
    with ``status="failed"``.
    """
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    results = []
    for T, N in spec.cells():
        path = cache / f"{cell_key(data_key, spec, T, N)}.json" if cache else None
        if path is not None and path.exists():
            with open(path, encoding="utf-8") as fh:
                results.append(CellResult(**json.load(fh)))
            continue
        try:
            cell = run_cell(features, onehot, valid, spec, T, N)
        except (TickLstmError, ValueError, FloatingPointError) as exc:
            logger.warning("cell T=%d N=%d failed: %s", T, N, exc)
            cell = CellResult(T, N, float("nan"), float("nan"), 0, 0.0, "failed", str(exc))
        if path is not None:
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(asdict(cell), fh)
            os.replace(tmp, path)
        results.append(cell)
        if on_cell is not None:
            on_cell(cell)
    return GridResult(results)
