"""Trade-by-trade data to fixed-interval bars, an LSTM direction classifier
and a costed long/short backtest."""

from ._version import __version__
from .backtest import chronological_eval, compare_benchmark, max_drawdown, rolling_accuracy, \
    simulate
from .bars import BarConfig, BarTable, LabelConfig, forward_returns, labels, make_bars, resample
from .config import ExperimentConfig, load_config
from .dataset import SplitConfig, build_examples, make_split, normalize_window, plan_offsets
from .errors import ConfigError, DataError, NumericError, TickLstmError
from .fetch import ExchangeConfig, TradeFetcher, fetch_trades
from .neural import LstmModel, LstmParams, TrainConfig, init_params, load_model, save_model, \
    train
from .search import GridSpec, run_grid
from .stationarity import adf_test, stationarize
from .trades import SynthConfig, Trade, TradeStream, read_trades, synth_trades, write_trades

__all__ = [
    "__version__",
    "BarConfig", "BarTable", "LabelConfig", "forward_returns", "labels", "make_bars", "resample",
    "ExperimentConfig", "load_config",
    "SplitConfig", "build_examples", "make_split", "normalize_window", "plan_offsets",
    "ConfigError", "DataError", "NumericError", "TickLstmError",
    "ExchangeConfig", "TradeFetcher", "fetch_trades",
    "LstmModel", "LstmParams", "TrainConfig", "init_params", "load_model", "save_model", "train",
    "GridSpec", "run_grid",
    "adf_test", "stationarize",
    "SynthConfig", "Trade", "TradeStream", "read_trades", "synth_trades", "write_trades",
    "chronological_eval", "compare_benchmark", "max_drawdown", "rolling_accuracy", "simulate",
]
