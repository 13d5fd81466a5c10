"""Cross-data-type 1-D CNN for intraday futures direction, with walk-forward
training, a flip-on-signal backtest and the weighted F score."""

from __future__ import annotations

from .backtest import CONTRACTS, ContractSpec, round_trip_cost, run_backtest, transaction_cost
from .labeling import Label, LabelConfig, label_series
from .market_data import BarSeries, DataError, generate_synthetic, parse_bars
from .metrics import ConfusionMatrix3, WfsParams, confusion, weighted_f_score
from .model import ModelConfig, Network, build_model, train_window
from .walkforward import WindowPlan, make_windows, run_walkforward

__version__ = "0.1.0"
