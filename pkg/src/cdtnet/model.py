"""
Network variants, frame scaling and single-window training.

Three variants share one training loop:

``CDT_CNN``
    frames ``(B, D, L)`` become ``(B, D, L, 1)``; every conv kernel scans each
    data-type row separately with shared weights. After the pooling schedule
    the time axis is 1 and the flatten width is ``D * channels``.
``REGULAR_CNN``
    frames become ``(B, L, D)``: data types are input channels of one 1-D
    signal, so the first conv mixes rows. Flatten width is ``channels``.
``MLP``
    the flattened ``D * L`` frame through the hidden stack.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .labeling import Label
from .market_data import FeatureFrame
from .metrics import confusion, weighted_f_score, WfsParams
from .nn.functional import softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)

VARIANTS = ("CDT_CNN", "REGULAR_CNN", "MLP")
N_CLASSES = 3


class LeakageError(RuntimeError):
    """Training touched data from or after the validation/test range."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "CDT_CNN"
    use_indicators: bool = False
    frame_len: int = 24
    conv: Tuple[Tuple[int, int], ...] = ((4, 32), (3, 64), (2, 128))
    pools: Tuple[int, ...] = (4, 3, 2)
    fc: Tuple[int, ...] = (1000, 500)
    mlp: Tuple[int, ...] = (300, 200, 100, 50, 25, 10)
    lr: float = 1e-3
    keep_prob: float = 0.7
    l2: float = 1e-5
    batch: int = 12
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant != "MLP":
            if len(self.conv) != len(self.pools):
                raise ValueError("conv and pools must have the same length")
            if time_schedule(self.frame_len, self.pools)[-1] != 1:
                raise ValueError(
                    f"pooling schedule {self.pools} reduces L={self.frame_len} to "
                    f"{time_schedule(self.frame_len, self.pools)[-1]}, not 1"
                )
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        if self.batch < 1 or self.max_epochs < 0 or self.lr <= 0:
            raise ValueError("batch >= 1, max_epochs >= 0 and lr > 0 required")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict) -> "ModelConfig":
        d = dict(d)
        d["conv"] = tuple(tuple(x) for x in d.get("conv", cls.conv))
        for k in ("pools", "fc", "mlp"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def time_schedule(length: int, pools: Sequence[int]) -> List[int]:
    out = [length]
    for p in pools:
        out.append(-(-out[-1] // p))
    return out


class Network:
    def __init__(self, cfg: ModelConfig, depth: int, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.depth = depth
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        L = cfg.frame_len
        layers: List[nn.Layer] = []

        if cfg.variant == "MLP":
            layers.append(nn.Reshape(lambda x: x.reshape(x.shape[0], -1), "flatten"))
            width = depth * L
            hidden = cfg.mlp
        else:
            if cfg.variant == "CDT_CNN":
                layers.append(nn.Reshape(lambda x: x[..., None], "add_channel"))
                cin = 1
            else:
                layers.append(nn.Transpose((0, 2, 1)))
                cin = depth
            for i, ((k, cout), pool) in enumerate(zip(cfg.conv, cfg.pools)):
                layers += [nn.Conv1D(k, cin, cout, rng, f"conv{i + 1}"), nn.ReLU(), nn.MaxPool1D(pool, f"pool{i + 1}")]
                cin = cout
            layers.append(nn.Reshape(lambda x: x.reshape(x.shape[0], -1), "flatten"))
            width = cin * (depth if cfg.variant == "CDT_CNN" else 1)
            hidden = cfg.fc

        self.flatten_width = width
        for i, h in enumerate(hidden):
            layers += [nn.Dense(width, h, rng, f"fc{i + 1}"), nn.ReLU(), nn.Dropout(cfg.keep_prob)]
            width = h
        layers.append(nn.Dense(width, N_CLASSES, rng, "out"))
        self.seq = nn.Sequential(layers)

    def forward(self, x: np.ndarray, training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if x.ndim != 3 or x.shape[1:] != (self.depth, self.cfg.frame_len):
            raise ValueError(f"expected frames of shape (B, {self.depth}, {self.cfg.frame_len}), got {x.shape}")
        return self.seq.forward(x, training, rng)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.seq.backward(dlogits)

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.seq.parameters()

    def gradients(self) -> Dict[str, np.ndarray]:
        return self.seq.gradients()

    def load(self, params: Dict[str, np.ndarray]) -> None:
        self.seq.load(params)

    def conv_parameter_count(self) -> int:
        return sum(v.size for k, v in self.parameters().items() if "_conv" in k)

    def parameter_count(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def feature_maps(self, x: np.ndarray) -> List[np.ndarray]:
        """Outputs of every conv layer (pre-activation), eval mode."""
        maps = []
        for layer in self.seq.layers:
            x = layer.forward(x)
            if isinstance(layer, nn.Conv1D):
                maps.append(x)
        return maps


def build_model(cfg: ModelConfig, depth: int) -> Network:
    return Network(cfg, depth)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowStats:
    """Scaling statistics fitted on a training range.

    Price rows: ``(x - frame's final close) / price_scale``, one transform for
    all price rows. Volume rows: ``(x - volume_mean) / volume_scale``, shared.
    Oscillator rows: per-row standardisation.
    """

    row_kinds: Tuple[str, ...]
    close_row: int
    price_scale: float
    volume_mean: float
    volume_scale: float
    osc_mean: Tuple[float, ...]
    osc_scale: Tuple[float, ...]
    fit_end: str  # latest timestamp read while fitting, ISO minutes

    def check_before(self, timestamp, what: str = "validation") -> None:
        if np.datetime64(self.fit_end, "m") >= np.datetime64(timestamp, "m"):
            raise LeakageError(f"scaling statistics read data up to {self.fit_end}, not before {what} start {timestamp}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict) -> "WindowStats":
        d = dict(d)
        for k in ("row_kinds", "osc_mean", "osc_scale"):
            d[k] = tuple(d[k])
        return cls(**d)


class DegenerateWindow(ValueError):
    pass


def fit_window_stats(frames: np.ndarray, row_kinds: Sequence[str], close_row: int, timestamps) -> WindowStats:
    """Fit on raw ``(S, D, L)`` training frames ending at ``timestamps``."""
    X = np.asarray(frames, dtype=np.float64)
    kinds = np.asarray(row_kinds)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("need a non-empty (S, D, L) frame array")
    last_close = X[:, close_row, -1][:, None, None]

    price = kinds == "price"
    dev = (X[:, price, :] - last_close).ravel()
    price_scale = float(np.sqrt(np.mean(dev * dev))) if dev.size else 1.0
    if not price_scale > 0:
        raise DegenerateWindow("price deviations have zero spread in the training window")

    vol = X[:, kinds == "volume", :].ravel()
    v_mean = float(vol.mean()) if vol.size else 0.0
    v_scale = float(vol.std()) if vol.size else 1.0
    if vol.size and not v_scale > 0:
        raise DegenerateWindow("volume has zero spread in the training window")

    osc_rows = np.flatnonzero(kinds == "oscillator")
    o_mean, o_scale = [], []
    for r in osc_rows:
        vals = X[:, r, :]
        s = float(vals.std())
        if not s > 0:
            raise DegenerateWindow(f"row {r} has zero spread in the training window")
        o_mean.append(float(vals.mean()))
        o_scale.append(s)

    fit_end = str(np.max(np.asarray(timestamps, dtype="datetime64[m]")))
    return WindowStats(tuple(row_kinds), int(close_row), price_scale, v_mean, v_scale, tuple(o_mean), tuple(o_scale), fit_end)


def scale_frames(frames: np.ndarray, stats: WindowStats) -> np.ndarray:
    X = np.array(frames, dtype=np.float64)
    kinds = np.asarray(stats.row_kinds)
    if X.shape[-2] != kinds.size:
        raise ValueError(f"frames have {X.shape[-2]} rows, stats were fitted on {kinds.size}")
    last_close = X[..., stats.close_row, -1][..., None, None]
    price = kinds == "price"
    X[..., price, :] = (X[..., price, :] - last_close) / stats.price_scale
    vol = kinds == "volume"
    X[..., vol, :] = (X[..., vol, :] - stats.volume_mean) / stats.volume_scale
    osc = np.flatnonzero(kinds == "oscillator")
    if osc.size:
        X[..., osc, :] = (X[..., osc, :] - np.asarray(stats.osc_mean)[:, None]) / np.asarray(stats.osc_scale)[:, None]
    return X


def scale_frame(frame, stats: WindowStats) -> np.ndarray:
    m = frame.matrix if isinstance(frame, FeatureFrame) else np.asarray(frame)
    return scale_frames(m[None], stats)[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledFrames:
    """Raw frames with labels and the timestamps needed for leakage checks."""

    X: np.ndarray  # (S, D, L)
    y: np.ndarray  # (S,) Label values, -1 when unlabeled
    timestamps: np.ndarray  # frame end, datetime64[m]
    horizon: np.ndarray  # timestamp of the close that fixes the label, NaT if none
    row_kinds: Tuple[str, ...]
    close_row: int

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx) -> "LabeledFrames":
        return LabeledFrames(self.X[idx], self.y[idx], self.timestamps[idx], self.horizon[idx], self.row_kinds, self.close_row)

    def labeled(self) -> "LabeledFrames":
        return self.subset(np.flatnonzero(self.y >= 0))

    def purge_before(self, timestamp) -> "LabeledFrames":
        """Drop samples whose label reads a close at or after ``timestamp``."""
        t = np.datetime64(timestamp, "m")
        keep = (self.timestamps < t) & ~np.isnat(self.horizon) & (self.horizon < t)
        return self.subset(np.flatnonzero(keep))


@dataclass
class TrainedModel:
    config: ModelConfig
    depth: int
    params: Dict[str, np.ndarray]
    stats: Optional[WindowStats]
    history: List[Dict] = field(default_factory=list)
    selected_epoch: int = 0

    def network(self) -> Network:
        net = getattr(self, "_net", None)
        if net is None:
            net = Network(self.config, self.depth)
            net.load(self.params)
            self._net = net
        return net

    def sidecar(self) -> Dict:
        return {
            "config": self.config.to_dict(),
            "depth": self.depth,
            "stats": self.stats.to_dict() if self.stats else None,
            "history": self.history,
            "selected_epoch": self.selected_epoch,
        }

    def save(self, stem) -> None:
        from .io_utils import atomic_write

        atomic_write(f"{stem}.bin", nn.dump_params(self.params))
        atomic_write(f"{stem}.json", json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, stem) -> "TrainedModel":
        with open(f"{stem}.json") as fh:
            side = json.load(fh)
        with open(f"{stem}.bin", "rb") as fh:
            params = nn.load_params(fh.read())
        stats = WindowStats.from_dict(side["stats"]) if side["stats"] else None
        return cls(ModelConfig.from_dict(side["config"]), side["depth"], params, stats, side["history"], side["selected_epoch"])


def _labels_from_probs(probs: np.ndarray) -> np.ndarray:
    """argmax with any tie at the maximum resolved to Flat."""
    best = probs.max(axis=1, keepdims=True)
    at_max = probs == best
    labels = np.argmax(probs, axis=1)
    labels[at_max.sum(axis=1) > 1] = int(Label.FLAT)
    return labels


def predict_scaled(net: Network, X: np.ndarray, batch: int = 512) -> Tuple[np.ndarray, np.ndarray]:
    out = []
    for s in range(0, X.shape[0], batch):
        out.append(softmax(net.forward(X[s : s + batch])))
    probs = np.concatenate(out) if out else np.empty((0, N_CLASSES))
    return probs, _labels_from_probs(probs)


def predict_batch(trained: TrainedModel, frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (trained.depth, trained.config.frame_len):
        raise ValueError(f"frames must be (S, {trained.depth}, {trained.config.frame_len}), got {X.shape}")
    if trained.stats is not None:
        X = scale_frames(X, trained.stats)
    return predict_scaled(trained.network(), X)


def predict(trained: TrainedModel, frame) -> Tuple[np.ndarray, Label]:
    m = frame.matrix if isinstance(frame, FeatureFrame) else np.asarray(frame)
    probs, labels = predict_batch(trained, m[None])
    return probs[0], Label(int(labels[0]))


def train_window(
    cfg: ModelConfig,
    train: LabeledFrames,
    val: LabeledFrames,
    stats: Optional[WindowStats] = None,
    wfs_params: WfsParams = WfsParams(),
) -> TrainedModel:
    """Train one network from scratch; keep the epoch with the best validation WFS.

    Scaling statistics are fitted on ``train`` unless given. Either way they
    must end before the first validation timestamp, and every training label
    must be fixed before it too.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("empty training or validation split")
    if np.any(train.y < 0) or np.any(val.y < 0):
        raise ValueError("training and validation samples must be labeled")
    val_start = val.timestamps.min()
    if train.timestamps.max() >= val_start or np.any(train.horizon >= val_start):
        raise LeakageError("training samples or their labels reach into the validation range")
    if stats is None:
        stats = fit_window_stats(train.X, train.row_kinds, train.close_row, train.timestamps)
    stats.check_before(val_start)

    depth = train.X.shape[1]
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    net = Network(cfg, depth, np.random.default_rng(seeds[0]))
    shuffle_rng = np.random.default_rng(seeds[1])
    drop_rng = np.random.default_rng(seeds[2])

    Xtr = scale_frames(train.X, stats)
    Xva = scale_frames(val.X, stats)
    ytr = train.y.astype(np.int64)
    yva = val.y.astype(np.int64)

    params = net.parameters()
    best = {k: v.copy() for k, v in params.items()}
    best_wfs, best_epoch, stale = -math.inf, 0, 0
    history: List[Dict] = []
    opt = nn.AdamState()

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(ytr))
        total, count = 0.0, 0
        for s in range(0, order.size, cfg.batch):
            idx = order[s : s + cfg.batch]
            logits = net.forward(Xtr[idx], training=True, rng=drop_rng)
            loss, dlogits = softmax_cross_entropy(logits, ytr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            net.backward(dlogits)
            nn.adam_step(params, net.gradients(), opt, cfg.lr, cfg.l2)
            total += loss * idx.size
            count += idx.size
        _, pred = predict_scaled(net, Xva)
        wfs = weighted_f_score(confusion(pred, yva), wfs_params)
        history.append({"epoch": epoch, "train_loss": total / count, "val_wfs": wfs})
        logger.debug("epoch %d loss %.5f val wfs %.4f", epoch, total / count, wfs)
        if wfs > best_wfs:
            best_wfs, best_epoch, stale = wfs, epoch, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    return TrainedModel(cfg, depth, best, stats, history, best_epoch)
