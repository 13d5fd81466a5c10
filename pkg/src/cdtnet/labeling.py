"""Up/Down/Flat labels from a volatility-scaled dynamic threshold."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


class Label(IntEnum):
    UP = 0
    DOWN = 1
    FLAT = 2

    @classmethod
    def parse(cls, text: str) -> "Label":
        return cls[text.strip().upper()]

    def __str__(self) -> str:
        return self.name.capitalize()


NO_LABEL = -1


@dataclass(frozen=True)
class LabelConfig:
    alpha: float = 0.55
    vol_window: int = 10
    # "price": std of closes; "return": std of simple returns, scaled by the close
    vol_mode: str = "price"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.vol_window < 2:
            raise ValueError("vol_window must be >= 2")
        if self.vol_mode not in ("price", "return"):
            raise ValueError(f"vol_mode must be 'price' or 'return', got {self.vol_mode!r}")


def volatility(closes: Sequence[float], window: int = 10) -> float:
    """Sample (n-1) standard deviation of the last ``window`` values."""
    x = np.asarray(closes, dtype=np.float64)
    if window < 2 or x.size < window:
        raise ValueError(f"need {window} values of history, got {x.size}")
    return float(np.std(x[-window:], ddof=1))


def classify_move(c_now: float, c_next: float, vol: float, alpha: float) -> Label:
    """Up when the move reaches ``alpha * vol`` above ``c_now``, Down when it
    reaches that far below, Flat otherwise. ``vol`` is in price units. A
    zero-width band with no move is Flat."""
    if c_next == c_now:
        return Label.FLAT
    band = alpha * vol
    if c_next >= c_now + band:
        return Label.UP
    if c_next <= c_now - band:
        return Label.DOWN
    return Label.FLAT


def _window_vol(x: np.ndarray, cfg: LabelConfig) -> float:
    """Volatility of a close window in price units.

    ``price`` mode is the sample std of the closes. ``return`` mode is the
    sample std of simple returns times the last close, which makes the band
    ``c * (1 +/- alpha * std_ret)``.
    """
    if cfg.vol_mode == "return":
        r = x[1:] / x[:-1] - 1.0
        return float(np.std(r, ddof=1)) * float(x[-1]) if r.size >= 2 else 0.0
    return float(np.std(x, ddof=1))


def label_series(closes: Sequence[float], cfg: LabelConfig = LabelConfig()) -> List[Optional[Label]]:
    """Label each 2-hour sample with the class of its next move.

    ``labels[t]`` compares ``closes[t+1]`` against the band around
    ``closes[t]`` built from the ``vol_window`` closes ending at ``t``.
    Samples without enough history, and the last sample, get ``None``.
    """
    x = np.asarray(closes, dtype=np.float64)
    if x.size <= cfg.vol_window:
        raise ValueError(f"need more than {cfg.vol_window} closes, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("close prices must be positive")
    w = cfg.vol_window
    out: List[Optional[Label]] = [None] * x.size
    for t in range(w - 1, x.size - 1):
        v = _window_vol(x[t - w + 1 : t + 1], cfg)
        out[t] = classify_move(x[t], x[t + 1], v, cfg.alpha)
    return out


def label_at(close: np.ndarray, end_cols: Sequence[int], horizon: int, cfg: LabelConfig = LabelConfig()) -> np.ndarray:
    """Labels for samples ending at arbitrary 5-minute columns.

    The sample ending at column ``e`` sees the closes at ``e, e-h, ..., e-(w-1)h``
    and is labeled by the close at ``e+h``. Equivalent to ``label_series`` on
    ``close[e % h::h]``. Missing labels are ``NO_LABEL``.
    """
    close = np.asarray(close, dtype=np.float64)
    w = cfg.vol_window
    out = np.full(len(end_cols), NO_LABEL, dtype=np.int64)
    for i, e in enumerate(end_cols):
        lo = e - (w - 1) * horizon
        if lo < 0 or e + horizon >= close.size:
            continue
        window = close[lo : e + 1 : horizon]
        if window[-1] <= 0 or close[e + horizon] <= 0:
            raise ValueError("close prices must be positive")
        out[i] = int(classify_move(close[e], close[e + horizon], _window_vol(window, cfg), cfg.alpha))
    return out


def class_balance(labels: Iterable) -> Dict[str, Dict[str, float]]:
    labs = [Label(int(l)) for l in labels if l is not None and int(l) != NO_LABEL]
    if not labs:
        raise ValueError("class_balance of empty label sequence")
    counts = Counter(labs)
    n = len(labs)
    return {
        "counts": {str(k): counts.get(k, 0) for k in Label},
        "fractions": {str(k): counts.get(k, 0) / n for k in Label},
    }
