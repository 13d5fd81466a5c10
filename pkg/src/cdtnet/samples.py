"""Turn a bar series into labeled 2-hour frames."""

from __future__ import annotations

import io
from typing import Optional

import numpy as np

from .indicators import FeatureMatrix, FeatureSchema, build_feature_matrix
from .labeling import NO_LABEL, Label, LabelConfig, label_at
from .market_data import FRAME_LEN, MAX_GAP_MINUTES, BarSeries, build_frames, gap_breaks
from .model import LabeledFrames


def make_samples(
    series: BarSeries,
    schema: FeatureSchema,
    label_cfg: LabelConfig = LabelConfig(),
    frame_len: int = FRAME_LEN,
    stride: int = FRAME_LEN,
    max_gap_minutes: int = MAX_GAP_MINUTES,
    features: Optional[FeatureMatrix] = None,
) -> LabeledFrames:
    """Frames on a grid anchored at multiples of ``frame_len``.

    Whatever the stride, frame ends fall on the same 2-hour grid phase as the
    stride-``frame_len`` frames, so a fine training grid contains the coarse
    one. A label is left unset when the next 2-hour close lies across a gap
    longer than ``max_gap_minutes`` or beyond the series.
    """
    fm = features if features is not None else build_feature_matrix(series, schema)
    first = fm.first_valid
    offset = -(-first // frame_len) * frame_len if stride % frame_len == 0 else first
    fs = build_frames(
        fm.values,
        frame_len,
        stride,
        timestamps=series.timestamps,
        row_kinds=schema.row_kinds,
        offset=offset,
        max_gap_minutes=max_gap_minutes,
    )
    ends = np.array([f.end_column for f in fs], dtype=np.int64)
    X = np.stack([f.matrix for f in fs]) if len(fs) else np.empty((0, schema.depth, frame_len))
    y = label_at(series.close, ends, frame_len, label_cfg)

    n = len(series)
    breaks = gap_breaks(series.timestamps, max_gap_minutes)
    horizon = np.full(ends.size, np.datetime64("NaT"), dtype="datetime64[m]")
    has_next = ends + frame_len < n
    horizon[has_next] = series.timestamps[ends[has_next] + frame_len]
    crosses = np.zeros(ends.size, dtype=bool)
    crosses[has_next] = breaks[ends[has_next] + frame_len] != breaks[ends[has_next]]
    y[crosses] = NO_LABEL

    return LabeledFrames(X, y, series.timestamps[ends], horizon, schema.row_kinds, schema.index("close"))


def labels_csv(samples: LabeledFrames, closes: np.ndarray) -> str:
    out = io.StringIO()
    out.write("timestamp,close,label\n")
    for t, c, l in zip(samples.timestamps.astype("datetime64[m]").astype(object), closes, samples.y):
        lab = "" if l == NO_LABEL else str(Label(int(l)))
        out.write(f"{t:%Y-%m-%d %H:%M},{float(c)!r},{lab}\n")
    return out.getvalue()


def parse_labels_csv(text: str):
    ts, labels = [], []
    for line in text.strip().splitlines()[1:]:
        t, _, lab = line.split(",")
        ts.append(np.datetime64(t.replace(" ", "T"), "m"))
        labels.append(NO_LABEL if not lab else int(Label.parse(lab)))
    return np.array(ts, dtype="datetime64[m]"), np.array(labels, dtype=np.int64)
