"""Single-layer LSTM classifier in numpy.

Topology: T LSTM steps over a ``(T, F)`` window, inverted dropout on the
last hidden vector, a dense ``2 x N`` layer and a softmax. The gate
equations, with ``A_t = [a_{t-1}; x_t]``::

    u_t  = sigmoid(W_u A_t + b_u)
    f_t  = sigmoid(W_f A_t + b_f)
    cc_t = tanh(W_c A_t + b_c)
    c_t  = u_t * cc_t + f_t * c_{t-1}
    o_t  = sigmoid(W_o A_t + b_o)
    a_t  = o_t * tanh(c_t)

Everything is float64. Gradients are exact (backpropagation through time).
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import (CorruptFile, Diverged, EmptyInput, NonFinite, ShapeMismatch,
                     VersionMismatch)

GATES = ("u", "f", "c", "o")
PARAM_NAMES = ("W_u", "W_f", "W_c", "W_o", "b_u", "b_f", "b_c", "b_o", "W_dense", "b_dense")
CLAMP = 1e-12


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(eq=False)
class LstmParams:
    W_u: np.ndarray
    W_f: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_u: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_dense: np.ndarray
    b_dense: np.ndarray

    @property
    def N(self) -> int:
        return self.W_u.shape[0]

    @property
    def F(self) -> int:
        return self.W_u.shape[1] - self.W_u.shape[0]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "LstmParams":
        return LstmParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def zeros_like(self) -> "LstmParams":
        return LstmParams(*(np.zeros_like(getattr(self, n)) for n in PARAM_NAMES))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LstmParams):
            return NotImplemented
        return all(np.array_equal(a, getattr(other, n)) for n, a in self.items())

    def check(self) -> None:
        N, F = self.N, self.F
        shapes = {"W_dense": (2, N), "b_dense": (2,)}
        for g in GATES:
            shapes[f"W_{g}"] = (N, N + F)
            shapes[f"b_{g}"] = (N,)
        for name, arr in self.items():
            if arr.shape != shapes[name]:
                raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"{name} contains non-finite values")

    @classmethod
    def zeros(cls, N: int, F: int) -> "LstmParams":
        return cls(*(np.zeros((N, N + F)) for _ in GATES), *(np.zeros(N) for _ in GATES),
                   np.zeros((2, N)), np.zeros(2))

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([self.W_u, self.W_f, self.W_c, self.W_o]),
                np.concatenate([self.b_u, self.b_f, self.b_c, self.b_o]))


def init_params(N: int, F: int, seed: int | np.random.Generator = 0) -> LstmParams:
    """Uniform(-k, k) weights with ``k = 1/sqrt(N + F)``; forget bias 1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = 1.0 / math.sqrt(N + F)
    W = [rng.uniform(-k, k, (N, N + F)) for _ in GATES]
    kd = 1.0 / math.sqrt(N)
    W_dense = rng.uniform(-kd, kd, (2, N))
    return LstmParams(*W, np.zeros(N), np.ones(N), np.zeros(N), np.zeros(N), W_dense, np.zeros(2))


@dataclass
class CellState:
    a: np.ndarray
    c: np.ndarray


def lstm_cell(x_t: np.ndarray, prev: CellState, params: LstmParams) -> CellState:
    x_t = np.asarray(x_t, dtype=np.float64)
    N, F = params.N, params.F
    if x_t.shape != (F,) or prev.a.shape != (N,) or prev.c.shape != (N,):
        raise ShapeMismatch(f"expected x of shape ({F},) and state of shape ({N},)")
    A = np.concatenate([prev.a, x_t])
    u = sigmoid(params.W_u @ A + params.b_u)
    f = sigmoid(params.W_f @ A + params.b_f)
    cc = np.tanh(params.W_c @ A + params.b_c)
    c = u * cc + f * prev.c
    o = sigmoid(params.W_o @ A + params.b_o)
    a = o * np.tanh(c)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
        raise NonFinite("cell state is not finite")
    return CellState(a, c)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(window: np.ndarray, params: LstmParams, dropout_mask: np.ndarray | None = None,
            keep_prob: float = 0.5):
    """Run the network over one ``(T, F)`` window or a ``(B, T, F)`` batch.

    With ``dropout_mask`` (boolean, ``(N,)`` or ``(B, N)``) the last hidden
    vector is multiplied by ``mask / keep_prob``; without it the call is in
    inference mode. Returns ``(probs, cache)``.
    """
    X = np.asarray(window, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != params.F:
        raise ShapeMismatch(f"window shape {np.shape(window)} does not match F={params.F}")
    B, T, _ = X.shape
    N = params.N
    W, b = params.stacked()
    A = np.empty((T, B, N + X.shape[2]))
    G = np.empty((T, B, 4 * N))
    C = np.zeros((T + 1, B, N))
    TC = np.empty((T, B, N))
    a = np.zeros((B, N))
    for t in range(T):
        A[t, :, :N] = a
        A[t, :, N:] = X[:, t, :]
        z = A[t] @ W.T + b
        g = G[t]
        g[:, : 2 * N] = sigmoid(z[:, : 2 * N])
        g[:, 2 * N: 3 * N] = np.tanh(z[:, 2 * N: 3 * N])
        g[:, 3 * N:] = sigmoid(z[:, 3 * N:])
        C[t + 1] = g[:, :N] * g[:, 2 * N: 3 * N] + g[:, N: 2 * N] * C[t]
        TC[t] = np.tanh(C[t + 1])
        a = g[:, 3 * N:] * TC[t]
    if dropout_mask is None:
        scale = np.ones((B, N))
    else:
        scale = np.broadcast_to(np.asarray(dropout_mask, dtype=np.float64), (B, N)) / keep_prob
    h = a * scale
    logits = h @ params.W_dense.T + params.b_dense
    probs = softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise NonFinite("forward pass produced non-finite values")
    cache = {"A": A, "G": G, "C": C, "TC": TC, "h": h, "scale": scale, "probs": probs,
             "single": single}
    return (probs[0] if single else probs), cache


def loss(probs: np.ndarray, label: np.ndarray) -> float:
    """Categorical cross-entropy, averaged over rows for a batch."""
    p = np.clip(np.asarray(probs, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(label, dtype=np.float64)
    per_row = -np.sum(y * np.log(p), axis=-1)
    return float(np.mean(per_row))


def backward(cache: dict, label: np.ndarray, params: LstmParams) -> LstmParams:
    """Gradient of the mean cross-entropy with respect to every parameter."""
    Y = np.asarray(label, dtype=np.float64).reshape(-1, 2)
    A, G, C, TC = cache["A"], cache["G"], cache["C"], cache["TC"]
    T, B, _ = A.shape
    N = params.N
    W, _ = params.stacked()

    dlogits = (cache["probs"] - Y) / B
    grads = params.zeros_like()
    grads.W_dense[...] = dlogits.T @ cache["h"]
    grads.b_dense[...] = dlogits.sum(axis=0)
    da = (dlogits @ params.W_dense) * cache["scale"]

    dW = np.zeros_like(W)
    db = np.zeros(4 * N)
    dc = np.zeros((B, N))
    dZ = np.empty((B, 4 * N))
    for t in range(T - 1, -1, -1):
        g = G[t]
        u, f, cc, o = g[:, :N], g[:, N:2 * N], g[:, 2 * N:3 * N], g[:, 3 * N:]
        tc = TC[t]
        dc = dc + da * o * (1.0 - tc * tc)
        dZ[:, :N] = dc * cc * u * (1.0 - u)
        dZ[:, N:2 * N] = dc * C[t] * f * (1.0 - f)
        dZ[:, 2 * N:3 * N] = dc * u * (1.0 - cc * cc)
        dZ[:, 3 * N:] = da * tc * o * (1.0 - o)
        dW += dZ.T @ A[t]
        db += dZ.sum(axis=0)
        da = dZ @ W[:, :N]
        dc = dc * f
    for k, gname in enumerate(GATES):
        getattr(grads, f"W_{gname}")[...] = dW[k * N:(k + 1) * N]
        getattr(grads, f"b_{gname}")[...] = db[k * N:(k + 1) * N]
    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"gradient of {name} is not finite")
    return grads


def global_norm(grads: LstmParams) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for _, g in grads.items()))


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: LstmParams
    v: LstmParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: LstmParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(params: LstmParams, grads: LstmParams, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 0.001
    lr_decay: float = 0.0003
    lr_decay_every: int = 15
    lr_floor: float = 0.0001
    batch_schedule: tuple[int, ...] = (128, 64, 32)
    dropout_rate: float = 0.5
    patience: int = 20
    divergence_factor: float = 1.05
    max_epochs: int = 100
    seed: int = 0
    clip_norm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "batch_schedule", tuple(int(b) for b in self.batch_schedule))

    def violations(self) -> list[str]:
        out = []
        if not 0 < self.lr_floor <= self.lr_initial:
            out.append("need 0 < lr_floor <= lr_initial")
        if self.lr_decay < 0 or self.lr_decay_every <= 0:
            out.append("lr_decay must be >= 0 and lr_decay_every > 0")
        bs = self.batch_schedule
        if not bs or any(not 32 <= b <= 128 for b in bs) or any(x < y for x, y in zip(bs, bs[1:])):
            out.append("batch_schedule must be non-increasing within [32, 128]")
        if not 0 <= self.dropout_rate < 1:
            out.append("dropout_rate must lie in [0, 1)")
        if self.patience <= 0 or self.max_epochs <= 0:
            out.append("patience and max_epochs must be positive")
        if self.divergence_factor <= 1:
            out.append("divergence_factor must exceed 1")
        return out


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    steps = epoch // cfg.lr_decay_every
    return max(cfg.lr_floor, cfg.lr_initial - cfg.lr_decay * steps)


def batch_size(epoch: int, cfg: TrainConfig) -> int:
    """Largest batch until the first learning-rate decay, then the next
    entry of the schedule at each decay."""
    steps = epoch // cfg.lr_decay_every
    return cfg.batch_schedule[min(steps, len(cfg.batch_schedule) - 1)]


class EarlyStopping:
    """Stop when validation loss has not improved for ``patience`` epochs,
    or as soon as it exceeds ``factor`` times the best value seen."""

    def __init__(self, patience: int = 20, factor: float = 1.05):
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.best_epoch = -1

    def update(self, epoch: int, val_loss: float) -> str | None:
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, epoch
            return None
        if val_loss > self.factor * self.best:
            return "divergence"
        if epoch - self.best_epoch >= self.patience:
            return "patience"
        return None


def evaluate(params: LstmParams, X: np.ndarray, Y: np.ndarray, chunk: int = 4096):
    """Inference-mode loss, accuracy and class probabilities.

    Ties in the argmax go to class ``[1, 0]``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 2)
    if len(Y) == 0:
        raise EmptyInput("no examples to evaluate")
    probs = np.concatenate([forward(X[i:i + chunk], params)[0] for i in range(0, len(X), chunk)])
    pred = np.argmax(probs, axis=1)
    acc = float(np.mean(pred == np.argmax(Y, axis=1)))
    return loss(probs, Y), acc, probs


HISTORY_COLUMNS = ("epoch", "lr", "batch_size", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class TrainResult:
    params: LstmParams
    history: list[dict]
    best_epoch: int
    stop_reason: str

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch]["val_loss"]

    @property
    def best_val_acc(self) -> float:
        return self.history[self.best_epoch]["val_acc"]


def train(train_X: np.ndarray, train_Y: np.ndarray, val_X: np.ndarray, val_Y: np.ndarray,
          n_hidden: int, cfg: TrainConfig = TrainConfig(),
          init: LstmParams | None = None) -> TrainResult:
    """Mini-batch Adam training with early stopping.

    Returns the parameters of the epoch with the lowest validation loss.
    """
    bad = cfg.violations()
    if bad:
        raise ValueError("; ".join(bad))
    train_X = np.asarray(train_X, dtype=np.float64)
    train_Y = np.asarray(train_Y, dtype=np.float64)
    if len(train_Y) == 0 or len(val_Y) == 0:
        raise EmptyInput("training and validation sets must be non-empty")
    if np.shape(val_X)[1:] != train_X.shape[1:]:
        raise ShapeMismatch("training and validation windows differ in shape")
    F = train_X.shape[2]
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else init_params(n_hidden, F, rng)
    state = AdamState.for_params(params)
    stopper = EarlyStopping(cfg.patience, cfg.divergence_factor)
    keep = 1.0 - cfg.dropout_rate
    history: list[dict] = []
    best = params.copy()
    reason = "max_epochs"
    n = len(train_Y)
    for epoch in range(cfg.max_epochs):
        lr = learning_rate(epoch, cfg)
        bs = batch_size(epoch, cfg)
        order = rng.permutation(n)
        for i in range(0, n, bs):
            idx = order[i:i + bs]
            mask = rng.random((len(idx), params.N)) < keep if cfg.dropout_rate > 0 else None
            _, cache = forward(train_X[idx], params, mask, keep_prob=keep)
            grads = backward(cache, train_Y[idx], params)
            if cfg.clip_norm > 0:
                norm = global_norm(grads)
                if norm > cfg.clip_norm:
                    for _, g in grads.items():
                        g *= cfg.clip_norm / norm
            adam_step(params, grads, state, lr)
        tr_loss, tr_acc, _ = evaluate(params, train_X, train_Y)
        va_loss, va_acc, _ = evaluate(params, val_X, val_Y)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise Diverged(f"non-finite loss at epoch {epoch}")
        history.append({"epoch": epoch, "lr": lr, "batch_size": bs, "train_loss": tr_loss,
                        "train_acc": tr_acc, "val_loss": va_loss, "val_acc": va_acc})
        stop = stopper.update(epoch, va_loss)
        if stopper.best_epoch == epoch:
            best = params.copy()
        if stop:
            reason = stop
            break
    return TrainResult(best, history, stopper.best_epoch, reason)


def write_history(history: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in HISTORY_COLUMNS])


# ---------------------------------------------------------------------------
# persistence

MODEL_MAGIC = b"TLLSTM\x00\x01"
MODEL_VERSION = (1, 0, 0)
NORMALIZATION_VERSION = 1


@dataclass(eq=False)
class LstmModel:
    """Trained parameters plus everything needed to prepare inputs for them."""

    params: LstmParams
    T: int
    interval_ms: int
    horizon_m: int
    feature_names: tuple[str, ...] = ()
    differenced: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def F(self) -> int:
        return self.params.F

    def config(self) -> dict:
        return {"N": self.N, "F": self.F, "T": self.T, "interval_ms": self.interval_ms,
                "horizon_m": self.horizon_m, "feature_names": list(self.feature_names),
                "differenced": list(self.differenced),
                "normalization_version": NORMALIZATION_VERSION, "extra": self.extra}

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.concatenate([forward(X[i:i + 4096], self.params)[0]
                               for i in range(0, len(X), 4096)]) if len(X) else np.empty((0, 2))


def save_model(model: LstmModel, path: str | os.PathLike) -> None:
    model.params.check()
    cfg = json.dumps(model.config(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HHH", *MODEL_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for _, arr in model.params.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> LstmModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise CorruptFile(f"{path}: not a model file")
    pos = len(MODEL_MAGIC)
    try:
        major, minor, patch = struct.unpack_from("<HHH", data, pos)
        pos += 6
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        cfg = json.loads(data[pos:pos + ln].decode("utf-8"))
        pos += ln
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header ({exc})") from None
    if major != MODEL_VERSION[0]:
        raise VersionMismatch(f"{path}: model format {major}.{minor}.{patch}, "
                              f"expected {MODEL_VERSION[0]}.x")
    if cfg.get("normalization_version") != NORMALIZATION_VERSION:
        raise VersionMismatch(f"{path}: normalization contract {cfg.get('normalization_version')}")
    N, F = int(cfg["N"]), int(cfg["F"])
    template = LstmParams.zeros(N, F)
    arrays = []
    for _, arr in template.items():
        nbytes = 8 * arr.size
        if pos + nbytes > len(data):
            raise CorruptFile(f"{path}: truncated parameter data")
        arrays.append(np.frombuffer(data, dtype="<f8", count=arr.size, offset=pos)
                      .reshape(arr.shape).astype(np.float64))
        pos += nbytes
    if pos != len(data):
        raise CorruptFile(f"{path}: trailing bytes after parameters")
    params = LstmParams(*arrays)
    return LstmModel(params, int(cfg["T"]), int(cfg["interval_ms"]), int(cfg["horizon_m"]),
                     tuple(cfg["feature_names"]), tuple(cfg["differenced"]), cfg.get("extra", {}))
