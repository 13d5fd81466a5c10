"""
Classification metrics for Up/Down/Flat predictions.

The weighted F score separates three error severities: a prediction in the
wrong direction (first level), a move predicted when the price stayed flat
(second level) and a missed move (third level). Correct Flat calls count
toward true positives only with weight ``beta3**2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .labeling import Label

UP, DOWN, FLAT = int(Label.UP), int(Label.DOWN), int(Label.FLAT)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix3:
    """counts[true, predicted] over (Up, Down, Flat)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (3, 3) or np.any(c < 0):
            raise ValueError("confusion matrix must be 3x3 with non-negative counts")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix3) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def cell(self, true: Label, pred: Label) -> int:
        return int(self.counts[int(true), int(pred)])

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {
            f"true_{str(Label(t)).lower()}": {f"pred_{str(Label(p)).lower()}": int(self.counts[t, p]) for p in range(3)}
            for t in range(3)
        }


@dataclass(frozen=True)
class WfsParams:
    beta1: float = 0.5
    beta2: float = 0.125
    beta3: float = 0.125

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")


def confusion(predictions: Sequence, truths: Sequence) -> ConfusionMatrix3:
    p = np.asarray([int(x) for x in predictions], dtype=np.int64)
    t = np.asarray([int(x) for x in truths], dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("no samples")
    if np.any((p < 0) | (p > 2) | (t < 0) | (t > 2)):
        raise ValueError("labels must be Up/Down/Flat")
    m = np.zeros((3, 3), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return ConfusionMatrix3(m)


def weighted_f_score(m: ConfusionMatrix3, p: WfsParams = WfsParams()) -> float:
    c = m.counts
    if m.total == 0:
        raise ValueError("weighted F score of an empty confusion matrix")
    b1, b2, b3 = p.beta1 ** 2, p.beta2 ** 2, p.beta3 ** 2
    hits = c[UP, UP] + c[DOWN, DOWN] + b3 * c[FLAT, FLAT]
    reversed_ = c[DOWN, UP] + c[UP, DOWN]
    false_move = c[FLAT, UP] + c[FLAT, DOWN]
    missed = c[UP, FLAT] + c[DOWN, FLAT]
    w = 1.0 + b1 + b2
    num = w * hits
    den = num + reversed_ + b1 * false_move + b2 * missed
    return float(num / den) if den > 0 else 0.0


def accuracy(m: ConfusionMatrix3) -> float:
    if m.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(m.counts) / m.total)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Sample Pearson correlation; ``None`` when either side has zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


CORRELATION_PAIRS = (("wfs", "aar"), ("wfs", "sharpe"), ("accuracy", "aar"), ("accuracy", "sharpe"))


def metric_correlation_report(results: Sequence[Dict]) -> List[Dict]:
    """Pearson correlations of {wfs, accuracy} x {aar, sharpe} across variants.

    ``results`` rows carry ``wfs``, ``accuracy``, ``aar``, ``sharpe`` and an
    optional ``instrument`` (default ``"all"``); one output row per
    instrument and pair. ``None`` marks an undefined correlation.
    """
    by_inst: Dict[str, List[Dict]] = {}
    for r in results:
        by_inst.setdefault(r.get("instrument", "all"), []).append(r)
    rows = []
    for inst in sorted(by_inst):
        group = by_inst[inst]
        if len(group) < 3:
            raise ValueError(f"{inst}: need at least 3 variants, got {len(group)}")
        for a, b in CORRELATION_PAIRS:
            xs = [g[a] for g in group]
            ys = [g[b] for g in group]
            if any(v is None for v in xs + ys):
                value = None
            else:
                value = pearson(xs, ys)
            rows.append({"instrument": inst, "x": a, "y": b, "n": len(group), "correlation": value})
    return rows


def correlation_csv(rows: Sequence[Dict]) -> str:
    lines = ["instrument,x,y,n,correlation"]
    for r in rows:
        v = "undefined" if r["correlation"] is None else repr(r["correlation"])
        lines.append(f"{r['instrument']},{r['x']},{r['y']},{r['n']},{v}")
    return "\n".join(lines) + "\n"


def metrics_dict(m: ConfusionMatrix3, p: WfsParams = WfsParams()) -> Dict:
    truth_counts = m.counts.sum(axis=1)
    pred_counts = m.counts.sum(axis=0)
    return {
        "wfs": weighted_f_score(m, p),
        "accuracy": accuracy(m),
        "confusion": m.to_dict(),
        "per_class_counts": {
            str(Label(k)): {"true": int(truth_counts[k]), "predicted": int(pred_counts[k])} for k in range(3)
        },
    }


def metrics_json(m: ConfusionMatrix3, p: WfsParams = WfsParams(), **extra) -> str:
    d = metrics_dict(m, p)
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
