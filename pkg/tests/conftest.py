"""Shared fixtures: a hand-checked five-trade stream and a small planted-signal corpus."""

import io

import numpy as np
import pytest

from ticklstm.bars import BarConfig, make_bars
from ticklstm.trades import SynthConfig, read_trades, synth_trades

FIVE_TRADES_CSV = """TradeID,Timestamp,Price,Amount,IsBuyerMaker
203767769,1578200400437,7457.18,0.042720,False
203767770,1578200400588,7457.15,0.004960,True
203767771,1578200400719,7457.14,0.100000,False
203767772,1578200400721,7457.16,0.074690,True
203767773,1578200400722,7457.22,0.015895,False
"""


@pytest.fixture
def five_trades():
    return read_trades(io.StringIO(FIVE_TRADES_CSV), instrument="BTCUSDT")


@pytest.fixture(scope="session")
def planted_trades():
    return synth_trades(7, 100_000, SynthConfig.planted())


@pytest.fixture(scope="session")
def planted_bars(planted_trades):
    return make_bars(planted_trades, BarConfig(60_000, (1,)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion after the run

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_")[1]
    num = int(name.split("_")[0])
    title = " ".join(name.split("_")[1:])
    if report.when == "call" or report.failed or report.skipped:
        if num in _ACCEPTANCE and _ACCEPTANCE[num][1] == "FAIL":
            return
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[num] = (title, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {outcome}  {title}")
