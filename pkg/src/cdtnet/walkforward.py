"""
Chronological moving windows: train from scratch, select on validation,
predict the test range, advance.

Window sizes come in two unit systems. Training size is usually quoted in
raw 5-minute records, validation/test/step in 2-hour samples; a
``WindowPlan`` carries a unit tag per size and converts everything to
sample counts with ``records_per_sample``.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .labeling import Label
from .metrics import confusion, weighted_f_score
from .model import (
    LabeledFrames,
    LeakageError,
    ModelConfig,
    TrainedModel,
    TrainingDiverged,
    predict_batch,
    train_window,
)

logger = logging.getLogger(__name__)

UNITS = ("records", "samples")


@dataclass(frozen=True)
class WindowPlan:
    train_size: int = 142_416
    val_size: int = 192
    test_size: int = 96
    step: int = 96
    train_unit: str = "records"
    val_unit: str = "samples"
    test_unit: str = "samples"
    step_unit: str = "samples"
    records_per_sample: int = 24

    def __post_init__(self):
        for name in ("train", "val", "test", "step"):
            unit = getattr(self, f"{name}_unit")
            if unit not in UNITS:
                raise ValueError(f"{name}_unit must be one of {UNITS}, got {unit!r}")
        sizes = self.in_samples()
        if min(sizes) < 1:
            raise ValueError(f"all window sizes must be at least one sample, got {sizes}")
        if sizes[3] > sizes[2]:
            raise ValueError("step must not exceed test size (test ranges would leave gaps)")

    def _samples(self, size: int, unit: str) -> int:
        return size // self.records_per_sample if unit == "records" else size

    def in_samples(self) -> Tuple[int, int, int, int]:
        return (
            self._samples(self.train_size, self.train_unit),
            self._samples(self.val_size, self.val_unit),
            self._samples(self.test_size, self.test_unit),
            self._samples(self.step, self.step_unit),
        )

    @property
    def minimal(self) -> int:
        tr, va, te, _ = self.in_samples()
        return tr + va + te


@dataclass(frozen=True)
class Window:
    index: int
    train: Tuple[int, int]  # half-open sample index ranges
    val: Tuple[int, int]
    test: Tuple[int, int]


def make_windows(n_samples: int, plan: WindowPlan) -> List[Window]:
    """Windows advance by ``step`` samples; each test range runs up to the
    next window's test start so no test sample is produced twice."""
    tr, va, te, step = plan.in_samples()
    if n_samples < plan.minimal:
        raise ValueError(f"need at least {plan.minimal} samples for one window, got {n_samples}")
    count = (n_samples - plan.minimal) // step + 1
    windows = []
    for i in range(count):
        a = i * step
        b, c = a + tr, a + tr + va
        d = c + te if i == count - 1 else c + step
        windows.append(Window(i, (a, b), (b, c), (c, d)))
    return windows


@dataclass(frozen=True)
class PredictionRecord:
    timestamp: datetime
    probabilities: Tuple[float, float, float]  # up, down, flat
    predicted: Label
    true: Label
    window: int


@dataclass
class WindowSummary:
    index: int
    seed: int
    n_train: int
    n_val: int
    n_test: int
    train_start: str
    train_end: str
    val_start: str
    val_end: str
    test_start: str
    test_end: str
    stats_fit_end: str
    selected_epoch: int
    val_wfs: Optional[float]
    epochs_run: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class WalkForwardResult:
    records: List[PredictionRecord]
    summaries: List[WindowSummary]
    models: List[TrainedModel] = field(default_factory=list)


def window_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _window_splits(dataset: LabeledFrames, w: Window, train_pool: Optional[LabeledFrames]):
    val = dataset.subset(slice(*w.val))
    test = dataset.subset(slice(*w.test))
    test_start = test.timestamps.min()
    val = val.purge_before(test_start)
    val_start = dataset.timestamps[w.val[0]]
    if train_pool is None:
        train = dataset.subset(slice(*w.train))
    else:
        lo, hi = dataset.timestamps[w.train[0]], dataset.timestamps[w.train[1] - 1]
        idx = np.flatnonzero((train_pool.timestamps >= lo) & (train_pool.timestamps <= hi) & (train_pool.y >= 0))
        train = train_pool.subset(idx)
    train = train.purge_before(val_start)
    return train, val, test


def check_window_hygiene(train: LabeledFrames, val: LabeledFrames, test: LabeledFrames, model: TrainedModel) -> None:
    """Raise ``LeakageError`` unless train < val < test and scaling stats end before val."""
    if not (train.timestamps.max() < val.timestamps.min() <= val.timestamps.max() < test.timestamps.min()):
        raise LeakageError("window ranges are not strictly chronological")
    if model.stats is not None:
        model.stats.check_before(val.timestamps.min())


def _fmt(t) -> str:
    return str(np.datetime64(t, "m"))


def train_one_window(dataset: LabeledFrames, w: Window, cfg: ModelConfig, master_seed: int,
                     train_pool: Optional[LabeledFrames] = None) -> Tuple[TrainedModel, WindowSummary]:
    train, val, test = _window_splits(dataset, w, train_pool)
    seed = window_seed(master_seed, w.index)
    try:
        model = train_window(replace(cfg, seed=seed), train, val)
    except TrainingDiverged as exc:
        raise TrainingDiverged(exc.epoch, f"window {w.index}: {exc}") from exc
    except (ValueError, LeakageError) as exc:
        raise type(exc)(f"window {w.index}: {exc}") from exc
    check_window_hygiene(train, val, test, model)
    best = max((h["val_wfs"] for h in model.history), default=None)
    summary = WindowSummary(
        w.index, seed, len(train), len(val), len(test),
        _fmt(train.timestamps.min()), _fmt(train.timestamps.max()),
        _fmt(val.timestamps.min()), _fmt(val.timestamps.max()),
        _fmt(test.timestamps.min()), _fmt(test.timestamps.max()),
        model.stats.fit_end if model.stats else "", model.selected_epoch, best, len(model.history),
    )
    return model, summary


def predict_window(dataset: LabeledFrames, w: Window, model: TrainedModel) -> List[PredictionRecord]:
    test = dataset.subset(slice(*w.test))
    probs, preds = predict_batch(model, test.X)
    out = []
    for t, p, yp, yt in zip(test.timestamps.astype(object), probs, preds, test.y):
        out.append(PredictionRecord(t, (float(p[0]), float(p[1]), float(p[2])), Label(int(yp)), Label(int(yt)), w.index))
    return out


def _train_job(args):
    dataset, w, cfg, seed, pool = args
    model, summary = train_one_window(dataset, w, cfg, seed, pool)
    return w.index, model, summary


def train_windows(
    dataset: LabeledFrames,
    windows: Sequence[Window],
    cfg: ModelConfig,
    master_seed: int = 0,
    workers: int = 1,
    train_pool: Optional[LabeledFrames] = None,
    order: Optional[Sequence[int]] = None,
) -> Tuple[List[TrainedModel], List[WindowSummary]]:
    """Train every window (optionally on a process pool); results sorted by index."""
    run_order = list(order) if order is not None else list(range(len(windows)))
    jobs = [(dataset, windows[i], cfg, master_seed, train_pool) for i in run_order]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    return [r[1] for r in results], [r[2] for r in results]


def predict_windows(dataset: LabeledFrames, windows: Sequence[Window], models: Sequence[TrainedModel]) -> List[PredictionRecord]:
    """Concatenate each window's test predictions; raises unless strictly chronological."""
    records = [rec for w, m in zip(windows, models) for rec in predict_window(dataset, w, m)]
    ts = np.array([np.datetime64(r.timestamp, "m") for r in records])
    if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "m")):
        raise LeakageError("concatenated test predictions are not strictly chronological")
    return records


def run_walkforward(
    dataset: LabeledFrames,
    plan: WindowPlan,
    cfg: ModelConfig,
    master_seed: int = 0,
    workers: int = 1,
    train_pool: Optional[LabeledFrames] = None,
    order: Optional[Sequence[int]] = None,
) -> WalkForwardResult:
    """Train and test every window; records come back in chronological order.

    ``dataset`` holds the labeled samples on the 2-hour grid. ``train_pool``,
    if given, is a finer-stride sample set used for training only.
    ``order`` fixes the execution order (results do not depend on it).
    """
    data = dataset.labeled()
    windows = make_windows(len(data), plan)
    models, summaries = train_windows(data, windows, cfg, master_seed, workers, train_pool, order)
    return WalkForwardResult(predict_windows(data, windows, models), summaries, models)


def records_csv(records: Sequence[PredictionRecord]) -> str:
    out = io.StringIO()
    out.write("timestamp,p_up,p_down,p_flat,pred,true,window\n")
    for r in records:
        p = r.probabilities
        out.write(f"{r.timestamp:%Y-%m-%d %H:%M},{p[0]!r},{p[1]!r},{p[2]!r},{r.predicted},{r.true},{r.window}\n")
    return out.getvalue()


def parse_records_csv(text: str) -> List[PredictionRecord]:
    out = []
    for line in text.strip().splitlines()[1:]:
        t, pu, pd_, pf, pred, true, w = line.split(",")
        out.append(PredictionRecord(datetime.strptime(t, "%Y-%m-%d %H:%M"), (float(pu), float(pd_), float(pf)),
                                    Label.parse(pred), Label.parse(true), int(w)))
    return out


def aggregate_wfs(records: Sequence[PredictionRecord]) -> float:
    return weighted_f_score(confusion([r.predicted for r in records], [r.true for r in records]))
