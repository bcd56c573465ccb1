"""Augmented Dickey-Fuller unit-root test and first differencing of
non-stationary feature columns."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .bars import FEATURE_COLUMNS, BarTable
from .errors import NonFinite, SingularDesign, TooShort

# MacKinnon (2010) response-surface coefficients, constant-only regression,
# one series: crit = b0 + b1/T + b2/T**2 + b3/T**3
_CRIT_COEFS = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.040),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}

# MacKinnon (1994) p-value approximation, constant-only, one series
_TAU_MAX = 2.74
_TAU_MIN = -18.83
_TAU_STAR = -1.61
_SMALLP = (2.1659, 1.4412, 0.038269)
_LARGEP = (1.7339, 0.93202, -0.12745, -0.010368)


def critical_values(n_obs: int) -> dict[float, float]:
    return {lvl: b0 + b1 / n_obs + b2 / n_obs ** 2 + b3 / n_obs ** 3
            for lvl, (b0, b1, b2, b3) in _CRIT_COEFS.items()}


def mackinnon_p(stat: float) -> float:
    """Approximate asymptotic p-value of an ADF t-ratio."""
    if stat > _TAU_MAX:
        return 1.0
    if stat < _TAU_MIN:
        return 0.0
    coefs = _SMALLP if stat <= _TAU_STAR else _LARGEP
    z = sum(c * stat ** i for i, c in enumerate(coefs))
    return float(norm.cdf(z))


@dataclass(frozen=True)
class AdfResult:
    test_statistic: float
    p_value: float
    p_value_bracket: str
    n_lags: int
    n_obs: int
    critical_values: dict
    significance: float
    reject_h0: bool


def _design(y: np.ndarray, lags: int, drop: int):
    """Regression rows for lag order ``lags``, skipping the first ``drop``
    usable differences so that different lag orders share a sample."""
    dy = np.diff(y)
    rows = np.arange(drop, len(dy))
    X = np.empty((len(rows), 2 + lags))
    X[:, 0] = 1.0
    X[:, 1] = y[rows]
    for j in range(1, lags + 1):
        X[:, 1 + j] = dy[rows - j]
    return X, dy[rows]


def _ols(X: np.ndarray, z: np.ndarray):
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise SingularDesign("regressors are collinear (constant series?)")
    beta = np.linalg.solve(r, q.T @ z)
    resid = z - X @ beta
    return beta, resid, r


def adf_test(series: Sequence[float], max_lag: int | str = "auto",
             significance: float = 0.05) -> AdfResult:
    """Dickey-Fuller regression with a constant and lagged differences.

    Fits ``dy_t = a + g*y_{t-1} + sum_j b_j dy_{t-j} + e_t`` by least squares
    and returns the t-ratio of ``g``. With ``max_lag="auto"`` the lag order
    is chosen by AIC over ``0..floor(12*(n/100)**0.25)`` on a common sample,
    then the chosen order is refitted on all available rows.
    """
    if significance not in _CRIT_COEFS:
        raise ValueError(f"significance must be one of {sorted(_CRIT_COEFS)}")
    y = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NonFinite("series contains non-finite values")
    n = len(y)
    if max_lag == "auto":
        top = int(math.floor(12.0 * (n / 100.0) ** 0.25))
        top = max(0, min(top, n // 2 - 3))
        if n < 6:
            raise TooShort(f"series of length {n} is too short for the ADF test")
        best, best_aic = 0, math.inf
        for k in range(top + 1):
            X, z = _design(y, k, top)
            _, resid, _ = _ols(X, z)
            ssr = float(resid @ resid)
            if ssr <= 0:
                raise SingularDesign("perfect fit")
            aic = len(z) * math.log(ssr / len(z)) + 2 * X.shape[1]
            if aic < best_aic:
                best, best_aic = k, aic
        lags = best
    else:
        lags = int(max_lag)
        if lags < 0:
            raise ValueError("max_lag must be non-negative")
        if n <= lags + 2 or n - 1 - lags <= lags + 2 + 1:
            raise TooShort(f"series of length {n} is too short for {lags} lags")

    X, z = _design(y, lags, lags)
    beta, resid, r = _ols(X, z)
    nobs, p = X.shape
    ssr = float(resid @ resid)
    if ssr <= 0 or nobs <= p:
        raise SingularDesign("perfect fit")
    sigma2 = ssr / (nobs - p)
    rinv = np.linalg.inv(r)
    var_g = sigma2 * float(rinv[1] @ rinv[1])
    stat = float(beta[1] / math.sqrt(var_g))

    crit = critical_values(nobs)
    if stat < crit[0.01]:
        bracket = "<0.01"
    elif stat < crit[0.05]:
        bracket = "<0.05"
    elif stat < crit[0.10]:
        bracket = "<0.10"
    else:
        bracket = ">=0.10"
    return AdfResult(stat, mackinnon_p(stat), bracket, lags, nobs,
                     {f"{k:.0%}": v for k, v in crit.items()}, significance,
                     bool(stat < crit[significance]))


def difference(series: Sequence[float]) -> np.ndarray:
    y = np.asarray(series, dtype=np.float64)
    if len(y) < 2:
        raise TooShort("need at least two values to difference")
    return y[1:] - y[:-1]


@dataclass(eq=False)
class FeatureTable:
    """Named feature matrix aligned to bar indices.

    ``bar_index[r]`` is the position, in the source :class:`BarTable`, of
    the bar that row ``r`` describes.
    """

    names: tuple[str, ...]
    values: np.ndarray
    bar_index: np.ndarray
    differenced: tuple[str, ...] = ()

    @classmethod
    def from_bars(cls, bars: BarTable) -> "FeatureTable":
        return cls(FEATURE_COLUMNS, bars.features(), np.arange(len(bars), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (self.names == other.names and self.differenced == other.differenced
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.bar_index, other.bar_index))


def apply_differencing(table: FeatureTable, columns: Sequence[str]) -> FeatureTable:
    """Difference ``columns`` and drop the first row so the table stays
    rectangular. A no-op when ``columns`` is empty."""
    columns = tuple(c for c in table.names if c in set(columns))
    if not columns:
        return table
    if len(table) < 2:
        raise TooShort("need at least two rows to difference")
    values = table.values[1:].copy()
    for c in columns:
        j = table.names.index(c)
        values[:, j] = difference(table.values[:, j])
    return FeatureTable(table.names, values, table.bar_index[1:],
                        table.differenced + columns)


def stationarize(table: FeatureTable | BarTable, significance: float = 0.10,
                 max_lag: int | str = "auto") -> tuple[FeatureTable, list[dict]]:
    """ADF-test every column and difference the ones that keep a unit root.

    Returns the new table and a report with one entry per column:
    ``{"column", "statistic", "lags", "decision", "p_value"}``.
    """
    if isinstance(table, BarTable):
        table = FeatureTable.from_bars(table)
    if len(table) == 0:
        raise TooShort("empty table")
    report = []
    failing = []
    for j, name in enumerate(table.names):
        res = adf_test(table.values[:, j], max_lag=max_lag, significance=significance)
        decision = "stationary" if res.reject_h0 else "differenced"
        if not res.reject_h0:
            failing.append(name)
        report.append({"column": name, "statistic": res.test_statistic, "lags": res.n_lags,
                       "decision": decision, "p_value": res.p_value})
    return apply_differencing(table, failing), report


def report_json(report: list[dict]) -> str:
    return json.dumps(report, indent=2)
