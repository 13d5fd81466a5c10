"""
Always-in-the-market flip strategy over a stream of Up/Down/Flat signals.

The first Up (Down) opens a long (short); an opposite signal closes the open
trade and reverses; Flat holds. Fills happen at the open of the bar after
the signal. Each side is charged the conservative per-side cost, so a
round trip costs twice that. Capital moves only when a trade closes.

Capital is accumulated exactly (``fractions.Fraction``) and rounded once per
close, so the final capital always equals
``initial + sum(gross) - sum(costs)`` rounded to the nearest double.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .labeling import Label
from .market_data import BarSeries, DataError


@dataclass(frozen=True)
class ContractSpec:
    tick: float  # minimum price fluctuation
    spread: float  # bid-ask spread
    multiplier: float  # currency per point
    commission: float  # per contract
    contracts: int = 1

    def __post_init__(self):
        if min(self.tick, self.spread, self.commission) < 0:
            raise ValueError("tick, spread and commission must be >= 0")
        if self.multiplier <= 0:
            raise ValueError("multiplier must be > 0")
        if self.contracts < 1:
            raise ValueError("contract count must be >= 1")


# quoted with the CL example; others follow exchange tick/multiplier and one-spread-tick assumption
CONTRACTS: Dict[str, ContractSpec] = {
    "CL": ContractSpec(tick=0.01, spread=0.01, multiplier=1000, commission=2.75),
    "NG": ContractSpec(tick=0.001, spread=0.001, multiplier=10000, commission=2.75),
    "GC": ContractSpec(tick=0.1, spread=0.1, multiplier=100, commission=2.75),
    "S": ContractSpec(tick=0.25, spread=0.25, multiplier=50, commission=2.75),
    "ES": ContractSpec(tick=0.25, spread=0.25, multiplier=50, commission=2.25),
    "NQ": ContractSpec(tick=0.25, spread=0.25, multiplier=20, commission=2.25),
}


def transaction_cost(spec: ContractSpec) -> float:
    """Per-side cost: slippage is five ticks and the spread is doubled.

    ``contracts * (multiplier * (2 * spread + 5 * tick) + commission)``
    """
    slippage = 5.0 * spec.tick
    spread = 2.0 * spec.spread
    return spec.contracts * (spec.multiplier * (spread + slippage) + spec.commission)


def round_trip_cost(spec: ContractSpec) -> float:
    return 2.0 * transaction_cost(spec)


@dataclass(frozen=True)
class Trade:
    direction: int  # +1 long, -1 short
    entry_time: datetime
    exit_time: datetime
    entry_price: float
    exit_price: float
    gross: float
    cost: float

    @property
    def net(self) -> float:
        return self.gross - self.cost

    @property
    def side(self) -> str:
        return "long" if self.direction > 0 else "short"


@dataclass
class EquityCurve:
    timestamps: List[datetime]
    capital: List[float]
    initial: float

    def __len__(self) -> int:
        return len(self.capital)

    @property
    def final(self) -> float:
        return self.capital[-1] if self.capital else self.initial


@dataclass
class BacktestResult:
    trades: List[Trade]
    equity: EquityCurve

    @property
    def final_capital(self) -> float:
        return self.equity.final


def execution_prices(timestamps: Sequence, bars: BarSeries) -> np.ndarray:
    """Index of the first bar strictly after each signal timestamp."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    idx = np.searchsorted(bars.timestamps, ts, side="right")
    missing = np.flatnonzero(idx >= len(bars))
    if missing.size:
        raise DataError(f"no execution bar after signal at {ts[missing[0]]}")
    return idx


def run_backtest(
    signals: Sequence,
    timestamps: Sequence,
    bars: BarSeries,
    spec: ContractSpec,
    initial_capital: float = 100_000.0,
    end_time: Optional[datetime] = None,
) -> BacktestResult:
    """Replay ``signals`` (Label values) issued at ``timestamps``.

    Each signal fills at the open of the next bar. An open position is
    force-closed at the open of the last bar at or before ``end_time``
    (default: the last bar of ``bars``), and that close is charged like any
    other.
    """
    sig = [int(s) for s in signals]
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    if len(sig) != ts.size:
        raise ValueError("signals and timestamps differ in length")
    if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "m")):
        raise DataError("signal timestamps must be strictly increasing")
    fill_idx = execution_prices(ts, bars) if ts.size else np.empty(0, dtype=np.int64)

    if end_time is None:
        end_idx = len(bars) - 1
    else:
        end_idx = int(np.searchsorted(bars.timestamps, np.datetime64(end_time, "m"), side="right")) - 1
    if ts.size and end_idx < fill_idx[-1]:
        raise DataError("terminal bar precedes the last fill")

    fill_ts = bars.timestamps.astype(datetime)
    opens = bars.open
    return _simulate(sig, ts.astype(datetime), [float(opens[i]) for i in fill_idx], [fill_ts[i] for i in fill_idx],
                     float(opens[end_idx]) if len(bars) else 0.0, fill_ts[end_idx] if len(bars) else None,
                     spec, initial_capital)


def run_backtest_prices(
    signals: Sequence,
    timestamps: Sequence[datetime],
    fill_prices: Sequence[float],
    terminal_price: float,
    spec: ContractSpec,
    initial_capital: float = 100_000.0,
    fill_times: Optional[Sequence[datetime]] = None,
    terminal_time: Optional[datetime] = None,
) -> BacktestResult:
    """Same state machine with fill prices supplied directly."""
    times = list(timestamps)
    fills_t = list(fill_times) if fill_times is not None else times
    end_t = terminal_time if terminal_time is not None else (fills_t[-1] if fills_t else None)
    return _simulate([int(s) for s in signals], times, [float(p) for p in fill_prices], fills_t,
                     float(terminal_price), end_t, spec, initial_capital)


def _simulate(sig, sig_times, fill_px, fill_times, end_px, end_time, spec, initial_capital) -> BacktestResult:
    per_side = transaction_cost(spec)
    scale = spec.multiplier * spec.contracts
    exact = Fraction(initial_capital)
    capital = float(initial_capital)
    trades: List[Trade] = []
    eq_t: List[datetime] = []
    eq_c: List[float] = []

    pos = 0
    entry_px = 0.0
    entry_t = None

    def close(exit_px, exit_t):
        nonlocal exact, capital
        gross = (exit_px - entry_px) * scale if pos > 0 else (entry_px - exit_px) * scale
        trades.append(Trade(pos, entry_t, exit_t, entry_px, exit_px, gross, 2.0 * per_side))
        exact += Fraction(gross) - Fraction(2.0 * per_side)
        capital = float(exact)

    for s, st, px, ft in zip(sig, sig_times, fill_px, fill_times):
        want = 1 if s == Label.UP else -1 if s == Label.DOWN else 0
        if want and want != pos:
            if pos:
                close(px, ft)
            pos, entry_px, entry_t = want, px, ft
        eq_t.append(st)
        eq_c.append(capital)

    if pos:
        close(end_px, end_time)
        eq_t.append(end_time)
        eq_c.append(capital)
    if not eq_c:
        eq_t, eq_c = [end_time], [capital]
    return BacktestResult(trades, EquityCurve(eq_t, eq_c, float(initial_capital)))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def monthly_capital(curve: EquityCurve) -> List[tuple]:
    """(YYYY-MM, month-end capital) per calendar month touched by the curve."""
    out: Dict[str, float] = {}
    for t, c in zip(curve.timestamps, curve.capital):
        out[f"{t:%Y-%m}"] = c
    return sorted(out.items())


def monthly_returns(curve: EquityCurve) -> List[tuple]:
    prev = curve.initial
    rets = []
    for month, cap in monthly_capital(curve):
        rets.append((month, cap / prev - 1.0))
        prev = cap
    return rets


def max_drawdown(capital: Sequence[float]) -> float:
    peak = -math.inf
    worst = 0.0
    for c in capital:
        peak = max(peak, c)
        if peak > 0:
            worst = max(worst, (peak - c) / peak)
    return worst


def equity_stats(curve: EquityCurve) -> Dict[str, Optional[float]]:
    """Cumulative return, monthly returns, arithmetic and geometric AAR,
    Sharpe (monthly, zero risk-free, annualised by sqrt 12) and max drawdown.

    Sharpe is ``None`` with fewer than two months or zero return variance.
    """
    months = monthly_returns(curve)
    r = np.array([x for _, x in months])
    cumulative = curve.final / curve.initial - 1.0
    aar = float(r.mean() * 12.0) if r.size else 0.0
    aar_geo = float((curve.final / curve.initial) ** (12.0 / r.size) - 1.0) if r.size and curve.final > 0 else None
    sharpe = None
    if r.size >= 2:
        sd = float(r.std(ddof=1))
        if sd > 0:
            sharpe = float(r.mean() / sd * math.sqrt(12.0))
    return {
        "cumulative_return": float(cumulative),
        "monthly_returns": [{"month": m, "return": float(x)} for m, x in months],
        "average_annual_return": aar,
        "average_annual_return_geometric": aar_geo,
        "sharpe_ratio": sharpe,
        "max_drawdown": float(max_drawdown([curve.initial] + list(curve.capital))),
        "months": int(r.size),
    }


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _ts(t) -> str:
    return "" if t is None else f"{t:%Y-%m-%d %H:%M}"


def ledger_csv(trades: Sequence[Trade]) -> str:
    out = io.StringIO()
    out.write("entry_ts,exit_ts,dir,entry_px,exit_px,gross,cost,net\n")
    for t in trades:
        out.write(f"{_ts(t.entry_time)},{_ts(t.exit_time)},{t.side},{t.entry_price!r},{t.exit_price!r},"
                  f"{t.gross!r},{t.cost!r},{t.net!r}\n")
    return out.getvalue()


def equity_csv(curve: EquityCurve) -> str:
    out = io.StringIO()
    out.write("timestamp,capital\n")
    for t, c in zip(curve.timestamps, curve.capital):
        out.write(f"{_ts(t)},{c!r}\n")
    return out.getvalue()


def parse_equity_csv(text: str, initial: Optional[float] = None) -> EquityCurve:
    lines = [l for l in text.strip().splitlines()[1:] if l]
    ts, cap = [], []
    for l in lines:
        a, b = l.split(",")
        ts.append(datetime.strptime(a, "%Y-%m-%d %H:%M"))
        cap.append(float(b))
    return EquityCurve(ts, cap, cap[0] if initial is None and cap else float(initial or 0.0))


def stats_json(stats: Dict, **extra) -> str:
    d = dict(stats)
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
