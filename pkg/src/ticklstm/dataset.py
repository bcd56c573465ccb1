"""Disjoint training/validation periods and offset-tiled trailing windows.

Bar positions here are row positions of a feature table. A window with
prediction index ``t`` covers rows ``[t - T, t)`` and is labelled with the
forward return of its last row ``t - 1``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import columnar
from .bars import class_balance
from .errors import Infeasible, InvalidFraction, NonFinite

TRAINING = "training"
VALIDATION = "validation"


@dataclass(frozen=True)
class Period:
    start: int
    end: int
    kind: str

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SplitConfig:
    p: int = 50
    q: int = 0
    seed: int = 0


@dataclass(frozen=True)
class OffsetPlan:
    period_length: int
    window_T: int
    selected_offsets: tuple[int, ...]
    fraction: float
    seed: int


def make_split(n_bars: int, cfg: SplitConfig, T: int) -> list[Period]:
    """Place ``p`` validation periods of length ``q`` at random and keep the
    gaps between them (of length at least ``T``) as training periods.

    Validation periods never touch each other; placement is uniform over
    all such layouts. Periods are returned in bar order.
    """
    p, q = cfg.p, cfg.q
    if T <= 0:
        raise Infeasible("window length must be positive")
    if p < 0:
        raise Infeasible("p must be non-negative")
    if p == 0:
        return [Period(0, n_bars, TRAINING)] if n_bars >= T else []
    if q <= T:
        raise Infeasible(f"validation length q={q} must exceed window length T={T}")
    free = n_bars - p * q - (p - 1)
    if free < 0 or p * q >= n_bars:
        raise Infeasible(f"cannot place {p} periods of length {q} in {n_bars} bars")
    rng = np.random.default_rng(cfg.seed)
    slots = np.sort(rng.choice(free + p, size=p, replace=False))
    starts = [int(c) + i * q for i, c in enumerate(slots)]

    periods = []
    cursor = 0
    for s in starts:
        if s - cursor >= T:
            periods.append(Period(cursor, s, TRAINING))
        periods.append(Period(s, s + q, VALIDATION))
        cursor = s + q
    if n_bars - cursor >= T:
        periods.append(Period(cursor, n_bars, TRAINING))
    return periods


def plan_offsets(period_length: int, T: int, fraction: float, seed: int) -> OffsetPlan:
    """Choose which window offsets to use for one period.

    ``period_length % T`` (windows flush with the period end) and ``0``
    (windows flush with the period start) are always included, so every bar
    of the period falls in some window. The rest are drawn without
    replacement until ``max(1, floor(fraction * T))`` offsets are chosen.
    """
    if not 0.10 <= fraction <= 0.50:
        raise InvalidFraction(f"fraction {fraction} outside [0.10, 0.50]")
    if period_length < T:
        raise Infeasible(f"period of length {period_length} is shorter than T={T}")
    mandatory = sorted({period_length % T, 0})
    target = max(1, int(math.floor(fraction * T + 1e-9)))
    rest = np.array([o for o in range(T) if o not in mandatory], dtype=np.int64)
    extra = max(0, target - len(mandatory))
    rng = np.random.default_rng(seed)
    drawn = rng.choice(rest, size=extra, replace=False).tolist() if extra else []
    return OffsetPlan(period_length, T, tuple(sorted(mandatory + drawn)), fraction, seed)


def windows_for_offset(period: Period, T: int, offset: int,
                       label_valid: np.ndarray | None = None) -> list[int]:
    """Prediction indices ``start + offset + k*T`` (k >= 1) inside the period.

    With ``label_valid`` given, windows whose last row has no label are
    dropped.
    """
    if not 0 <= offset < T:
        raise ValueError(f"offset {offset} outside [0, {T - 1}]")
    out = list(range(period.start + offset + T, period.end + 1, T))
    if label_valid is not None:
        out = [t for t in out if label_valid[t - 1]]
    return out


def normalize_window(raw: np.ndarray) -> np.ndarray:
    """Per-column min-max scaling of a ``(T, F)`` window (or a stack of
    windows ``(k, T, F)``). Constant columns become zeros."""
    x = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFinite("window contains non-finite values")
    lo = x.min(axis=-2, keepdims=True)
    span = x.max(axis=-2, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass(eq=False)
class ExampleSet:
    """Stack of normalised windows.

    ``X`` is ``(k, T, F)``; ``Y`` is ``(k, 2)`` one-hot; ``prediction_index``,
    ``period`` and ``offset`` identify where each window came from.
    """

    X: np.ndarray
    Y: np.ndarray
    prediction_index: np.ndarray
    period: np.ndarray
    offset: np.ndarray

    def __len__(self) -> int:
        return len(self.Y)

    @property
    def T(self) -> int:
        return self.X.shape[1]

    def balance(self) -> float:
        return class_balance(self.Y)

    def window_ranges(self) -> list[tuple[int, int]]:
        return [(int(t) - self.T, int(t)) for t in self.prediction_index]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExampleSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("X", "Y", "prediction_index", "period", "offset"))

    @classmethod
    def empty(cls, T: int, F: int) -> "ExampleSet":
        i = np.empty(0, dtype=np.int64)
        return cls(np.empty((0, T, F)), np.empty((0, 2)), i, i.copy(), i.copy())


def build_examples(features: np.ndarray, onehot: np.ndarray, valid: np.ndarray,
                   periods: Sequence[Period], T: int, fraction: float = 0.25,
                   seed: int = 0) -> tuple[ExampleSet, ExampleSet, dict]:
    """Materialise training and validation examples.

    ``features`` is ``(n, F)``; ``onehot``/``valid`` are the row labels as
    returned by :func:`ticklstm.bars.labels` aligned to the same rows.
    Each period gets its own offset plan (seeded from ``seed`` and the
    period's position); output order is by period, offset, then index.
    Returns ``(train, val, info)`` where ``info`` records plans, counts and
    class balances.
    """
    features = np.asarray(features, dtype=np.float64)
    n, F = features.shape
    seeds = np.random.SeedSequence(seed).spawn(len(periods))
    picked: dict[str, list] = {TRAINING: [], VALIDATION: []}
    plans = []
    for pid, (per, ss) in enumerate(zip(periods, seeds)):
        if per.end > n:
            raise ValueError(f"period {per} exceeds table of {n} rows")
        if len(per) < T:
            continue
        plan = plan_offsets(len(per), T, fraction, int(ss.generate_state(1)[0]))
        plans.append({"period": pid, "start": per.start, "end": per.end, "kind": per.kind,
                      "offsets": list(plan.selected_offsets)})
        for off in plan.selected_offsets:
            for t in windows_for_offset(per, T, off, valid):
                picked[per.kind].append((t, pid, off))

    out = []
    for kind in (TRAINING, VALIDATION):
        rows = picked[kind]
        if not rows:
            out.append(ExampleSet.empty(T, F))
            continue
        t_idx = np.array([r[0] for r in rows], dtype=np.int64)
        gather = t_idx[:, None] + np.arange(-T, 0)[None, :]
        X = normalize_window(features[gather])
        out.append(ExampleSet(X, onehot[t_idx - 1].astype(np.float64), t_idx,
                              np.array([r[1] for r in rows], dtype=np.int64),
                              np.array([r[2] for r in rows], dtype=np.int64)))
    train, val = out
    all_rows = np.flatnonzero(valid[: max((p.end for p in periods), default=0)])
    info = {
        "T": T,
        "fraction": fraction,
        "seed": seed,
        "plans": plans,
        "n_train": len(train),
        "n_val": len(val),
        "balance_train": train.balance() if len(train) else None,
        "balance_val": val.balance() if len(val) else None,
        "balance_all": class_balance(onehot[all_rows]) if len(all_rows) else None,
    }
    return train, val, info


def shuffle_labels(ds: ExampleSet, seed: int) -> ExampleSet:
    """Copy of ``ds`` with labels randomly permuted (null-signal control)."""
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ExampleSet(ds.X, ds.Y[perm], ds.prediction_index, ds.period, ds.offset)


# ---------------------------------------------------------------------------
# persistence


def write_examples(ds: ExampleSet, path: str | os.PathLike, meta: dict | None = None) -> None:
    k, T, F = ds.X.shape
    cols = {"prediction_index": ds.prediction_index, "period": ds.period,
            "offset": ds.offset, "y_up": ds.Y[:, 0], "y_down": ds.Y[:, 1]}
    flat = ds.X.reshape(k, T * F)
    for j in range(T * F):
        cols[f"x{j // F}_{j % F}"] = flat[:, j]
    columnar.write_columns(path, cols, meta={"kind": "examples", "T": T, "F": F, **(meta or {})})


def read_examples(path: str | os.PathLike) -> ExampleSet:
    cols, meta = columnar.read_columns(path)
    T, F = int(meta["T"]), int(meta["F"])
    k = len(cols["y_up"])
    flat = np.column_stack([cols[f"x{j // F}_{j % F}"] for j in range(T * F)]) if k else \
        np.empty((0, T * F))
    return ExampleSet(flat.reshape(k, T, F), np.column_stack([cols["y_up"], cols["y_down"]]),
                      cols["prediction_index"].astype(np.int64),
                      cols["period"].astype(np.int64), cols["offset"].astype(np.int64))


def write_manifest(path: str | os.PathLike, info: dict, split: SplitConfig,
                   periods: Sequence[Period]) -> None:
    doc = {"split": asdict(split), "periods": [asdict(p) for p in periods], **info}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
