"""
5-minute OHLCV bars: parsing, gap detection, framing and synthetic generation.

Series are stored column-wise (one numpy array per field) so indicator and
framing code can work on whole columns. A ``Bar`` is materialised only when
a caller indexes or iterates a series.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import IO, Iterator, List, Optional, Sequence, Union

import numpy as np

BAR_MINUTES = 5
FRAME_LEN = 24
MAX_GAP_MINUTES = 30

_DATE_FMT = "%Y-%m-%d"
_TIME_FMT = "%H:%M"


class DataError(ValueError):
    """Malformed or inconsistent market data."""


@dataclass(frozen=True)
class Bar:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        _check_ohlc(self.open, self.high, self.low, self.close, self.volume)


def _check_ohlc(o, h, l, c, v, where: str = "") -> None:
    if not (l <= o <= h and l <= c <= h):
        raise DataError(f"{where}OHLC invariant violated (o={o}, h={h}, l={l}, c={c})")
    if v < 0:
        raise DataError(f"{where}negative volume {v}")


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BarSeries:
    symbol: str
    timestamps: np.ndarray  # datetime64[m]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        object.__setattr__(self, "timestamps", _frozen(ts))
        for name in ("open", "high", "low", "close", "volume"):
            col = np.asarray(getattr(self, name), dtype=np.float64)
            if col.shape != ts.shape:
                raise DataError(f"column {name!r} has {col.shape[0]} rows, expected {ts.shape[0]}")
            object.__setattr__(self, name, _frozen(col))
        if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "m")):
            raise DataError("timestamps must be strictly increasing")

    @classmethod
    def from_bars(cls, symbol: str, bars: Sequence[Bar]) -> "BarSeries":
        return cls(
            symbol,
            np.array([np.datetime64(b.timestamp, "m") for b in bars], dtype="datetime64[m]"),
            [b.open for b in bars],
            [b.high for b in bars],
            [b.low for b in bars],
            [b.close for b in bars],
            [b.volume for b in bars],
        )

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    def __getitem__(self, i: int) -> Bar:
        return Bar(
            self.timestamps[i].astype(datetime),
            float(self.open[i]),
            float(self.high[i]),
            float(self.low[i]),
            float(self.close[i]),
            float(self.volume[i]),
        )

    def __iter__(self) -> Iterator[Bar]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BarSeries):
            return NotImplemented
        return self.symbol == other.symbol and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("timestamps", "open", "high", "low", "close", "volume")
        )

    @property
    def bars(self) -> List[Bar]:
        return list(self)

    def ohlcv(self) -> np.ndarray:
        """5 x N matrix in open, high, low, close, volume row order."""
        return np.vstack([self.open, self.high, self.low, self.close, self.volume])

    def slice(self, start: int, stop: int) -> "BarSeries":
        return BarSeries(
            self.symbol,
            self.timestamps[start:stop],
            self.open[start:stop],
            self.high[start:stop],
            self.low[start:stop],
            self.close[start:stop],
            self.volume[start:stop],
        )

    def drop(self, indices: Sequence[int]) -> "BarSeries":
        keep = np.ones(len(self), dtype=bool)
        keep[list(indices)] = False
        return BarSeries(
            self.symbol,
            self.timestamps[keep],
            self.open[keep],
            self.high[keep],
            self.low[keep],
            self.close[keep],
            self.volume[keep],
        )


def _empty_series(symbol: str) -> BarSeries:
    e = np.empty(0)
    return BarSeries(symbol, np.empty(0, dtype="datetime64[m]"), e, e, e, e, e)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _parse_timestamp(date_s: str, time_s: str) -> datetime:
    return datetime.strptime(f"{date_s.strip()} {time_s.strip()}", f"{_DATE_FMT} {_TIME_FMT}")


def parse_bars(source: Union[bytes, str, IO], symbol: str) -> BarSeries:
    """Parse ``date,time,open,high,low,close,volume`` rows.

    A single leading header line is detected by its first field not being a
    date. Rows are sorted chronologically; duplicate timestamps are an error.
    Line numbers in error messages are 1-based and count the header.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    rows = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if lineno == 1 and not rows:
            try:
                datetime.strptime(parts[0].strip(), _DATE_FMT)
            except ValueError:
                continue  # header
        if len(parts) != 7:
            raise DataError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            ts = _parse_timestamp(parts[0], parts[1])
            o, h, l, c, v = (float(p) for p in parts[2:])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        _check_ohlc(o, h, l, c, v, where=f"line {lineno}: ")
        rows.append((ts, o, h, l, c, v, lineno))

    if not rows:
        return _empty_series(symbol)

    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise DataError(f"line {cur[6]}: duplicate timestamp {cur[0]:%Y-%m-%d %H:%M} (first seen on line {prev[6]})")

    cols = list(zip(*rows))
    return BarSeries(
        symbol,
        np.array([np.datetime64(t, "m") for t in cols[0]], dtype="datetime64[m]"),
        cols[1], cols[2], cols[3], cols[4], cols[5],
    )


def _fmt_num(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def serialize_bars(series: BarSeries, header: bool = True) -> str:
    out = io.StringIO()
    if header:
        out.write("date,time,open,high,low,close,volume\n")
    ts = series.timestamps.astype(datetime)
    for i in range(len(series)):
        t = ts[i]
        out.write(
            f"{t:%Y-%m-%d},{t:%H:%M},{_fmt_num(series.open[i])},{_fmt_num(series.high[i])},"
            f"{_fmt_num(series.low[i])},{_fmt_num(series.close[i])},{_fmt_num(series.volume[i])}\n"
        )
    return out.getvalue()


# ---------------------------------------------------------------------------
# Gaps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gap:
    gap_start: datetime  # first missing bar
    gap_end: datetime  # first bar after the gap (exclusive end)
    missing_bars: int

    @property
    def duration(self) -> timedelta:
        return self.gap_end - self.gap_start


@dataclass(frozen=True)
class GapReport:
    gaps: List[Gap] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.gaps)

    @property
    def missing_bars(self) -> int:
        return sum(g.missing_bars for g in self.gaps)

    def __bool__(self) -> bool:
        return bool(self.gaps)

    def to_json(self) -> str:
        return json.dumps(
            {
                "count": self.count,
                "missing_bars": self.missing_bars,
                "gaps": [
                    {
                        "gap_start": g.gap_start.strftime("%Y-%m-%d %H:%M"),
                        "gap_end": g.gap_end.strftime("%Y-%m-%d %H:%M"),
                        "missing_bars": g.missing_bars,
                    }
                    for g in self.gaps
                ],
            },
            indent=2,
        )


def validate_series(series: BarSeries, bar_minutes: int = BAR_MINUTES) -> GapReport:
    if len(series) < 2:
        return GapReport()
    spacing = np.diff(series.timestamps).astype(np.int64)
    ts = series.timestamps.astype(datetime)
    gaps = []
    for i in np.flatnonzero(spacing > bar_minutes):
        span = int(spacing[i])
        gaps.append(
            Gap(
                ts[i] + timedelta(minutes=bar_minutes),
                ts[i + 1],
                -(-span // bar_minutes) - 1,
            )
        )
    return GapReport(gaps)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

ROW_KINDS = ("price", "volume", "oscillator")


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    end_timestamp: Optional[datetime]
    matrix: np.ndarray  # D x L
    row_kinds: tuple
    end_column: int = -1

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError("frame matrix must be 2-D")
        if len(self.row_kinds) != self.matrix.shape[0]:
            raise ValueError("row_kinds length must match frame rows")


@dataclass
class FrameSet:
    frames: List[FeatureFrame]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


def frame_starts(n_columns: int, frame_len: int = FRAME_LEN, stride: int = FRAME_LEN, offset: int = 0) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if n_columns - offset < frame_len:
        raise DataError(f"need at least {frame_len} columns after offset {offset}, got {n_columns - offset}")
    count = (n_columns - offset - frame_len) // stride + 1
    return offset + stride * np.arange(count)


def gap_breaks(timestamps: np.ndarray, max_gap_minutes: int = MAX_GAP_MINUTES) -> np.ndarray:
    """Cumulative count of oversized gaps; equal values at two columns mean no gap between them."""
    spacing = np.diff(np.asarray(timestamps, dtype="datetime64[m]")).astype(np.int64)
    return np.concatenate([[0], np.cumsum(spacing > max_gap_minutes)])


def build_frames(
    features: np.ndarray,
    frame_len: int = FRAME_LEN,
    stride: int = FRAME_LEN,
    *,
    timestamps: Optional[np.ndarray] = None,
    row_kinds: Optional[Sequence[str]] = None,
    offset: int = 0,
    max_gap_minutes: int = MAX_GAP_MINUTES,
) -> FrameSet:
    """Cut a D x N feature matrix into D x frame_len windows.

    Frame i covers columns ``[offset + i*stride, offset + i*stride + frame_len)``.
    With ``timestamps`` given, frames spanning a gap longer than
    ``max_gap_minutes`` are dropped and counted in ``FrameSet.dropped``.
    """
    features = np.asarray(features, dtype=np.float64)
    d, n = features.shape
    kinds = tuple(row_kinds) if row_kinds is not None else ("price",) * d
    starts = frame_starts(n, frame_len, stride, offset)
    breaks = gap_breaks(timestamps, max_gap_minutes) if timestamps is not None else None
    ts = np.asarray(timestamps, dtype="datetime64[m]").astype(datetime) if timestamps is not None else None

    frames, dropped = [], 0
    for s in starts:
        e = s + frame_len - 1
        if breaks is not None and breaks[e] != breaks[s]:
            dropped += 1
            continue
        frames.append(FeatureFrame(ts[e] if ts is not None else None, features[:, s : e + 1].copy(), kinds, int(e)))
    return FrameSet(frames, dropped)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    base_price: float = 1.0
    drift: float = 0.0  # relative return per bar
    volatility: float = 0.001  # relative return std per bar
    base_volume: int = 500


@dataclass(frozen=True)
class PlantedPattern:
    """A volume spike coinciding with a price step inside a 2-hour frame.

    At a site the frame carries a one-bar price step of ``step`` times the bar
    volatility together with a ``volume_spike``-fold volume burst on the same
    bar. The close ``frame_len`` bars later is then pushed beyond the dynamic
    threshold in the step's direction (Up or Down). Decoy frames carry only the
    price step or only the volume burst and are followed by a move that stays
    inside the band (Flat), as are plain frames.

    The band is recomputed here from the generated frame closes (sample std of
    the last ``vol_window`` closes times ``alpha``), so the generator carries
    its own copy of the threshold rule.
    """

    site_rate: float = 0.5
    decoy_rate: float = 0.2
    probability: float = 1.0
    step: float = 6.0
    volume_spike: float = 6.0
    min_move: float = 0.004  # relative move floor for Up/Down follow-through
    margin: float = 1.25
    alpha: float = 0.55
    vol_window: int = 10
    frame_len: int = FRAME_LEN


@dataclass(frozen=True)
class SyntheticSpec:
    length: int
    seed: int = 0
    regime: Regime = Regime()
    planted_pattern: Optional[PlantedPattern] = None
    start: datetime = datetime(2010, 1, 4, 0, 0)
    symbol: str = "SYN"

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")


@dataclass(frozen=True)
class SyntheticSeries:
    series: BarSeries
    site_classes: np.ndarray  # per generated frame: 0 up, 1 down, 2 flat, -1 not enforced
    site_kind: np.ndarray  # per frame: 0 plain, 1 site, 2 price-only decoy, 3 volume-only decoy


def _sample_std(x: np.ndarray) -> float:
    m = x.sum() / x.size
    return float(np.sqrt(((x - m) ** 2).sum() / (x.size - 1)))


def generate_synthetic(spec: SyntheticSpec) -> BarSeries:
    return generate_synthetic_detail(spec).series


def generate_synthetic_detail(spec: SyntheticSpec) -> SyntheticSeries:
    """Seeded OHLCV generator.

    Only additions, multiplications, divisions and square roots are applied
    to the PCG64 draws, so a fixed spec produces bit-identical series on any
    IEEE-754 platform.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    reg = spec.regime
    n = spec.length
    sigma = reg.volatility

    noise = rng.standard_normal(n) * sigma + reg.drift
    wick = np.abs(rng.standard_normal((2, n))) * (sigma * 0.5)
    vol_noise = rng.random(n)
    volume = np.floor(reg.base_volume * (0.5 + vol_noise))

    pat = spec.planted_pattern
    if pat is None:
        close = reg.base_price * np.cumprod(1.0 + noise)
        n_frames = 0
        classes = np.empty(0, dtype=np.int64)
        kinds = np.empty(0, dtype=np.int64)
    else:
        close, volume, classes, kinds = _planted_path(rng, spec, noise, volume)
        n_frames = classes.size

    open_ = np.empty(n)
    open_[0] = reg.base_price
    open_[1:] = close[:-1]
    high = np.maximum(open_, close) * (1.0 + wick[0])
    low = np.minimum(open_, close) * (1.0 - np.minimum(wick[1], 0.5))

    ts = np.datetime64(spec.start, "m") + np.arange(n) * np.timedelta64(BAR_MINUTES, "m")
    series = BarSeries(spec.symbol, ts, open_, high, low, close, volume)
    return SyntheticSeries(series, classes[:n_frames], kinds[:n_frames])


def _planted_path(rng, spec: SyntheticSpec, noise: np.ndarray, volume: np.ndarray):
    pat = spec.planted_pattern
    reg = spec.regime
    sigma = reg.volatility
    L = pat.frame_len
    n = spec.length
    n_frames = n // L

    u_kind = rng.random(n_frames)
    u_dir = rng.random(n_frames)
    u_pos = rng.integers(2, L - 2, size=n_frames)
    u_flat = rng.random(n_frames) * 2.0 - 1.0
    u_hold = rng.random(n_frames)

    kinds = np.zeros(n_frames, dtype=np.int64)
    kinds[u_kind < pat.site_rate] = 1
    decoy = (u_kind >= pat.site_rate) & (u_kind < pat.site_rate + pat.decoy_rate)
    kinds[decoy & (u_dir < 0.5)] = 2
    kinds[decoy & (u_dir >= 0.5)] = 3
    direction = np.where(u_dir < 0.5, 1.0, -1.0)
    # decoys reuse u_dir for their type, so draw price-decoy sign from the position parity
    direction[kinds == 2] = np.where(u_pos[kinds == 2] % 2 == 0, 1.0, -1.0)

    increments = noise.copy()
    volume = volume.copy()
    for k in range(n_frames):
        j = k * L + int(u_pos[k])
        if kinds[k] in (1, 2):
            increments[j] += direction[k] * pat.step * max(sigma, 1e-4)
        if kinds[k] in (1, 3):
            volume[j] = np.floor(volume[j] * pat.volume_spike)

    close = np.empty(n)
    classes = np.full(n_frames, -1, dtype=np.int64)
    frame_close = np.empty(n_frames)
    level = reg.base_price
    for k in range(n_frames):
        s = k * L
        inc = increments[s : s + L] * level
        if k >= pat.vol_window:
            # target close for frame k follows the class planted in frame k-1
            prev = frame_close[k - 1]
            band = pat.alpha * _sample_std(frame_close[k - pat.vol_window : k])
            cls = _planted_class(kinds[k - 1], direction[k - 1], u_hold[k - 1], pat.probability)
            if cls == 0:
                target = prev + max(band * pat.margin, prev * pat.min_move)
            elif cls == 1:
                target = prev - max(band * pat.margin, prev * pat.min_move)
            else:
                target = prev + u_flat[k] * band * 0.5
            classes[k - 1] = cls
            inc = inc + (target - level - inc.sum()) / L
        path = level + np.cumsum(inc)
        if k >= pat.vol_window:
            path[-1] = target
        close[s : s + L] = path
        level = path[-1]
        frame_close[k] = level
    tail = n - n_frames * L
    if tail:
        close[n_frames * L :] = level * np.cumprod(1.0 + increments[n_frames * L :])
    return close, volume, classes, kinds


def _planted_class(kind: int, direction: float, u: float, probability: float) -> int:
    if kind != 1:
        return 2
    implied = 0 if direction > 0 else 1
    if u < probability:
        return implied
    return 1 - implied
