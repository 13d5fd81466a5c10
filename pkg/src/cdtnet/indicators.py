"""
Technical indicators over a ``BarSeries`` and the feature-matrix schema.

Every indicator returns one value per bar. Bars inside an indicator's
warm-up carry ``nan`` and are excluded from framing by
``build_feature_matrix``'s first valid column. All indicators are causal:
output ``i`` reads bars ``0..i`` only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .market_data import Bar, BarSeries, DataError

INDICATOR_KINDS = (
    "EMA", "MACD_HIST", "BOLLINGER", "RSI", "CCI", "VWAP", "OBV", "ADX", "ADL", "CMF", "ROC", "TP",
)


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Primitive formulas
# ---------------------------------------------------------------------------

def typical_price(bar: Bar) -> float:
    return (bar.high + bar.low + bar.close) / 3.0


def typical_price_series(high, low, close) -> np.ndarray:
    return (np.asarray(high) + np.asarray(low) + np.asarray(close)) / 3.0


def ema(closes, n: int = 1, alpha: Optional[float] = None) -> np.ndarray:
    """out[0] = closes[0]; out[i] = alpha*closes[i] + (1-alpha)*out[i-1].

    ``alpha`` defaults to 2/(n+1).
    """
    x = np.asarray(closes, dtype=np.float64)
    if x.size == 0:
        raise ValueError("ema of empty sequence")
    a = 2.0 / (n + 1.0) if alpha is None else float(alpha)
    if not 0.0 < a <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {a}")
    out = np.empty_like(x)
    acc = x[0]
    out[0] = acc
    b = 1.0 - a
    for i in range(1, x.size):
        acc = a * x[i] + b * acc
        out[i] = acc
    return out


def macd(closes, a: int = 26, b: int = 12) -> np.ndarray:
    """EMA over the slow span ``a`` minus EMA over the fast span ``b`` (a > b)."""
    if not a > b >= 1:
        raise ValueError(f"MACD needs a > b >= 1, got a={a}, b={b}")
    return ema(closes, a) - ema(closes, b)


def macd_histogram(closes, a: int = 26, b: int = 12, signal: int = 9) -> np.ndarray:
    line = macd(closes, a, b)
    return line - ema(line, signal)


def roc(closes, n: int) -> np.ndarray:
    """Percent change over ``n`` bars; returns ``len(closes) - n`` values."""
    x = np.asarray(closes, dtype=np.float64)
    if n < 1:
        raise ValueError("ROC span must be >= 1")
    if x.size <= n:
        raise ValueError(f"ROC({n}) needs more than {n} values")
    base = x[:-n]
    if np.any(base == 0):
        raise ZeroDivisionError("ROC over a zero price")
    return 100.0 * (x[n:] - base) / base


def sma(x, n: int) -> np.ndarray:
    """Trailing mean; first n-1 entries are nan."""
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.size, np.nan)
    if x.size >= n:
        w = np.lib.stride_tricks.sliding_window_view(x, n)
        out[n - 1 :] = w.mean(axis=1)
    return out


def rolling_std(x, n: int, ddof: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.size, np.nan)
    if x.size >= n:
        w = np.lib.stride_tricks.sliding_window_view(x, n)
        out[n - 1 :] = w.std(axis=1, ddof=ddof)
    return out


def rsi(closes, n: int = 14) -> np.ndarray:
    """Wilder RSI. Defined from index n; flat window gives 50, no losses gives 100."""
    x = np.asarray(closes, dtype=np.float64)
    out = np.full(x.size, np.nan)
    if x.size <= n:
        return out
    d = np.diff(x)
    gain = np.where(d > 0, d, 0.0)
    loss = np.where(d < 0, -d, 0.0)
    ag = gain[:n].mean()
    al = loss[:n].mean()
    out[n] = _rsi_value(ag, al)
    for i in range(n, d.size):
        ag = (ag * (n - 1) + gain[i]) / n
        al = (al * (n - 1) + loss[i]) / n
        out[i + 1] = _rsi_value(ag, al)
    return out


def _rsi_value(ag: float, al: float) -> float:
    if al == 0.0:
        return 50.0 if ag == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + ag / al)


def cci(high, low, close, n: int = 20) -> np.ndarray:
    tp = typical_price_series(high, low, close)
    out = np.full(tp.size, np.nan)
    if tp.size < n:
        return out
    w = np.lib.stride_tricks.sliding_window_view(tp, n)
    mean = w.mean(axis=1)
    mad = np.abs(w - mean[:, None]).mean(axis=1)
    dev = tp[n - 1 :] - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mad > 0, dev / (0.015 * np.where(mad > 0, mad, 1.0)), 0.0)
    out[n - 1 :] = val
    return out


def bollinger(close, n: int = 20, k: float = 2.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mid = sma(close, n)
    sd = rolling_std(close, n)
    return mid + k * sd, mid, mid - k * sd


def money_flow_multiplier(high, low, close) -> np.ndarray:
    h, l, c = (np.asarray(a, dtype=np.float64) for a in (high, low, close))
    rng = h - l
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rng > 0, ((c - l) - (h - c)) / np.where(rng > 0, rng, 1.0), 0.0)


def adl(high, low, close, volume) -> np.ndarray:
    return np.cumsum(money_flow_multiplier(high, low, close) * np.asarray(volume, dtype=np.float64))


def cmf(high, low, close, volume, n: int = 20) -> np.ndarray:
    mfv = money_flow_multiplier(high, low, close) * np.asarray(volume, dtype=np.float64)
    vol = np.asarray(volume, dtype=np.float64)
    out = np.full(vol.size, np.nan)
    if vol.size < n:
        return out
    num = np.lib.stride_tricks.sliding_window_view(mfv, n).sum(axis=1)
    den = np.lib.stride_tricks.sliding_window_view(vol, n).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[n - 1 :] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def obv(close, volume) -> np.ndarray:
    c = np.asarray(close, dtype=np.float64)
    v = np.asarray(volume, dtype=np.float64)
    step = np.zeros(c.size)
    step[1:] = np.sign(np.diff(c)) * v[1:]
    return np.cumsum(step)


def vwap(high, low, close, volume, timestamps) -> np.ndarray:
    """Cumulative sum(TP*volume)/sum(volume), restarting each calendar day."""
    tp = typical_price_series(high, low, close)
    v = np.asarray(volume, dtype=np.float64)
    days = np.asarray(timestamps, dtype="datetime64[D]")
    out = np.empty(tp.size)
    pv = vv = 0.0
    for i in range(tp.size):
        if i == 0 or days[i] != days[i - 1]:
            pv = vv = 0.0
        pv += tp[i] * v[i]
        vv += v[i]
        out[i] = pv / vv if vv > 0 else tp[i]
    return out


def adx(high, low, close, n: int = 14) -> np.ndarray:
    """Wilder ADX. Defined from index 2n-1; zero directional movement gives 0."""
    h, l, c = (np.asarray(a, dtype=np.float64) for a in (high, low, close))
    out = np.full(c.size, np.nan)
    if c.size < 2 * n:
        return out
    up = h[1:] - h[:-1]
    down = l[:-1] - l[1:]
    pdm = np.where((up > down) & (up > 0), up, 0.0)
    mdm = np.where((down > up) & (down > 0), down, 0.0)
    tr = np.maximum.reduce([h[1:] - l[1:], np.abs(h[1:] - c[:-1]), np.abs(l[1:] - c[:-1])])

    s_tr, s_p, s_m = tr[:n].sum(), pdm[:n].sum(), mdm[:n].sum()
    dx = np.empty(tr.size - n + 1)
    dx[0] = _dx(s_tr, s_p, s_m)
    for i in range(n, tr.size):
        s_tr = s_tr - s_tr / n + tr[i]
        s_p = s_p - s_p / n + pdm[i]
        s_m = s_m - s_m / n + mdm[i]
        dx[i - n + 1] = _dx(s_tr, s_p, s_m)
    # dx[j] belongs to bar j + n
    a = dx[:n].mean()
    out[2 * n - 1] = a
    for j in range(n, dx.size):
        a = (a * (n - 1) + dx[j]) / n
        out[j + n] = a
    return out


def _dx(s_tr: float, s_p: float, s_m: float) -> float:
    if s_tr <= 0:
        return 0.0
    pdi = 100.0 * s_p / s_tr
    mdi = 100.0 * s_m / s_tr
    tot = pdi + mdi
    return 0.0 if tot == 0 else 100.0 * abs(pdi - mdi) / tot


# ---------------------------------------------------------------------------
# Specs and dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise SchemaError(f"unknown indicator kind {self.kind!r}")
        p = self.param_dict
        for key in ("n", "a", "b", "signal"):
            if key in p and p[key] < 1:
                raise SchemaError(f"{self.kind}: span {key} must be >= 1")
        if self.kind == "MACD_HIST" and not p.get("a", 26) > p.get("b", 12):
            raise SchemaError("MACD_HIST requires a > b")

    @classmethod
    def make(cls, kind: str, **params) -> "IndicatorSpec":
        return cls(kind, tuple(sorted(params.items())))

    @property
    def param_dict(self) -> Dict[str, float]:
        return dict(self.params)

    @property
    def warmup(self) -> int:
        p = self.param_dict
        n = int(p.get("n", 14))
        if self.kind == "EMA":
            return n - 1
        if self.kind == "MACD_HIST":
            return int(p.get("a", 26)) - 1 + int(p.get("signal", 9)) - 1
        if self.kind in ("BOLLINGER", "CCI", "CMF"):
            return n - 1
        if self.kind in ("ROC", "RSI"):
            return n
        if self.kind == "ADX":
            return 2 * n - 1
        return 0

    @property
    def longest_span(self) -> int:
        p = self.param_dict
        return int(max([p.get(k, 0) for k in ("n", "a", "signal")] + [0]))

    def to_text(self) -> str:
        args = ",".join(f"{k}={_fmt(v)}" for k, v in self.params)
        return f"{self.kind}({args})"


def _fmt(v) -> str:
    return str(int(v)) if float(v).is_integer() and not isinstance(v, str) else str(v)


def compute_indicator(spec: IndicatorSpec, series: BarSeries) -> np.ndarray:
    if spec.kind not in INDICATOR_KINDS:
        raise SchemaError(f"unknown indicator kind {spec.kind!r}")
    if len(series) <= spec.longest_span:
        raise DataError(f"{spec.to_text()} needs more than {spec.longest_span} bars, got {len(series)}")
    p = spec.param_dict
    n = int(p.get("n", 14))
    h, l, c, v = series.high, series.low, series.close, series.volume

    if spec.kind == "EMA":
        out = ema(c, n, p.get("alpha"))
    elif spec.kind == "MACD_HIST":
        out = macd_histogram(c, int(p.get("a", 26)), int(p.get("b", 12)), int(p.get("signal", 9)))
    elif spec.kind == "BOLLINGER":
        upper, mid, lower = bollinger(c, n, p.get("k", 2.0))
        out = {1: upper, 0: mid, -1: lower}[int(p.get("band", 0))]
    elif spec.kind == "RSI":
        out = rsi(c, n)
    elif spec.kind == "CCI":
        out = cci(h, l, c, n)
    elif spec.kind == "VWAP":
        out = vwap(h, l, c, v, series.timestamps)
    elif spec.kind == "OBV":
        out = obv(c, v)
    elif spec.kind == "ADX":
        out = adx(h, l, c, n)
    elif spec.kind == "ADL":
        out = adl(h, l, c, v)
    elif spec.kind == "CMF":
        out = cmf(h, l, c, v, n)
    elif spec.kind == "ROC":
        out = np.full(len(series), np.nan)
        out[n:] = roc(c, n)
    else:  # TP
        out = typical_price_series(h, l, c)

    out = np.array(out, dtype=np.float64)
    out[: spec.warmup] = np.nan
    return out


# price-denominated outputs share the raw price scale; the rest are standardised per row
_KIND_OF = {
    "EMA": "price", "BOLLINGER": "price", "VWAP": "price", "TP": "price",
    "MACD_HIST": "oscillator", "RSI": "oscillator", "CCI": "oscillator", "ADX": "oscillator",
    "CMF": "oscillator", "ROC": "oscillator", "OBV": "oscillator", "ADL": "oscillator",
}

RAW_ROWS = (("open", "price"), ("high", "price"), ("low", "price"), ("close", "price"), ("volume", "volume"))


@dataclass(frozen=True)
class RowDescriptor:
    name: str
    kind: str  # price | volume | oscillator
    indicator: Optional[IndicatorSpec] = None


@dataclass(frozen=True)
class FeatureSchema:
    rows: Tuple[RowDescriptor, ...]

    def __post_init__(self):
        names = [r.name for r in self.rows]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError(f"duplicate row names: {sorted(dup)}")
        if "close" not in names:
            raise SchemaError("schema must include the close row")

    @property
    def depth(self) -> int:
        return len(self.rows)

    @property
    def names(self) -> List[str]:
        return [r.name for r in self.rows]

    @property
    def row_kinds(self) -> Tuple[str, ...]:
        return tuple(r.kind for r in self.rows)

    @property
    def warmup(self) -> int:
        return max([r.indicator.warmup for r in self.rows if r.indicator is not None] + [0])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_text(self) -> str:
        return "\n".join(r.name if r.indicator is None else f"{r.name}={r.indicator.to_text()}" for r in self.rows)


def raw_schema() -> FeatureSchema:
    return FeatureSchema(tuple(RowDescriptor(n, k) for n, k in RAW_ROWS))


def _ind(name: str, kind: str, **params) -> RowDescriptor:
    return RowDescriptor(name, _KIND_OF[kind], IndicatorSpec.make(kind, **params))


def default_schema() -> FeatureSchema:
    """The 46-row schema: 5 raw rows and 41 indicator rows."""
    rows: List[RowDescriptor] = [RowDescriptor(n, k) for n, k in RAW_ROWS]
    rows += [_ind(f"ema_{n}", "EMA", n=n) for n in (5, 10, 20, 50, 100, 200)]
    rows += [_ind(f"macd_hist_{a}_{b}_{s}", "MACD_HIST", a=a, b=b, signal=s) for a, b, s in ((26, 12, 9), (52, 24, 18), (13, 6, 5))]
    for n in (20, 50):
        rows += [_ind(f"boll_{band}_{n}", "BOLLINGER", n=n, k=2, band=code) for band, code in (("upper", 1), ("mid", 0), ("lower", -1))]
    rows += [_ind(f"roc_{n}", "ROC", n=n) for n in (1, 3, 6, 12, 24, 48)]
    rows += [_ind(f"rsi_{n}", "RSI", n=n) for n in (6, 9, 14, 24, 48)]
    rows += [_ind(f"cci_{n}", "CCI", n=n) for n in (14, 20, 40, 80)]
    rows += [_ind(f"cmf_{n}", "CMF", n=n) for n in (10, 20, 40, 60)]
    rows += [_ind(f"adx_{n}", "ADX", n=n) for n in (7, 14, 28)]
    rows += [_ind("vwap", "VWAP"), _ind("obv", "OBV"), _ind("adl", "ADL"), _ind("tp", "TP")]
    return FeatureSchema(tuple(rows))


_ROW_RE = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=\s*([A-Z_]+)\s*\((.*)\)\s*$")


def parse_schema(text: str) -> FeatureSchema:
    """Parse ``raw5``, ``default46`` or one row per line / semicolon.

    Custom rows are either a raw column name (``open``..``volume``) or
    ``name=KIND(key=value,...)``.
    """
    text = text.strip()
    if text in ("raw5", "raw"):
        return raw_schema()
    if text in ("default46", "default"):
        return default_schema()
    raw = dict(RAW_ROWS)
    rows = []
    for item in re.split(r"[;\n]", text):
        item = item.strip()
        if not item:
            continue
        if item in raw:
            rows.append(RowDescriptor(item, raw[item]))
            continue
        m = _ROW_RE.match(item)
        if not m:
            raise SchemaError(f"cannot parse schema row {item!r}")
        name, kind, args = m.groups()
        if kind not in INDICATOR_KINDS:
            raise SchemaError(f"row {name!r}: unknown indicator kind {kind!r}")
        params = {}
        for kv in filter(None, (a.strip() for a in args.split(","))):
            k, _, v = kv.partition("=")
            params[k.strip()] = float(v)
        rows.append(_ind(name, kind, **params))
    return FeatureSchema(tuple(rows))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # D x N
    first_valid: int
    schema: FeatureSchema
    timestamps: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def build_feature_matrix(series: BarSeries, schema: FeatureSchema) -> FeatureMatrix:
    if len(series) <= schema.warmup:
        raise DataError(f"series of {len(series)} bars does not clear the {schema.warmup}-bar warm-up")
    raw = {"open": series.open, "high": series.high, "low": series.low, "close": series.close, "volume": series.volume}
    out = np.empty((schema.depth, len(series)))
    for i, row in enumerate(schema.rows):
        if row.indicator is None:
            if row.name not in raw:
                raise SchemaError(f"row {row.name!r} is neither a raw column nor an indicator")
            out[i] = raw[row.name]
        else:
            out[i] = compute_indicator(row.indicator, series)
    first = schema.warmup
    if not np.all(np.isfinite(out[:, first:])):
        raise DataError("non-finite indicator values after warm-up")
    out.setflags(write=False)
    return FeatureMatrix(out, first, schema, series.timestamps)


def feature_matrix_csv(fm: FeatureMatrix) -> str:
    lines = []
    for name, row in zip(fm.schema.names, fm.values):
        lines.append(name + "," + ",".join("" if np.isnan(x) else repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"
