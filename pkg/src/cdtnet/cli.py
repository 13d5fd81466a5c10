"""
Command-line pipeline: each subcommand reads the artifacts of the stage
before it from the run directory and writes its own.

    synth | ingest -> bars.csv, gaps.json
    features       -> features.csv, features.json
    label          -> labels.csv, labels.json
    train          -> models/window_NNN.{bin,json}, windows.json
    predict        -> predictions.csv
    backtest       -> ledger.csv, equity.csv, stats.json
    evaluate       -> metrics.json
    report         -> report/*.csv

Exit codes: 0 ok, 1 usage/config/missing artifact, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from datetime import timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from .backtest import equity_csv, equity_stats, ledger_csv, parse_equity_csv, run_backtest, stats_json
from .config import ConfigError, PipelineConfig, SECTIONS
from .indicators import build_feature_matrix, feature_matrix_csv, parse_schema
from .io_utils import atomic_write
from .labeling import NO_LABEL, LabelConfig, class_balance
from .market_data import DataError, SyntheticSpec, generate_synthetic_detail, parse_bars, serialize_bars, validate_series
from .metrics import confusion, correlation_csv, metric_correlation_report, metrics_dict
from .model import DegenerateWindow, LeakageError, TrainedModel, TrainingDiverged
from .nn import NonFiniteError
from .samples import labels_csv, make_samples, parse_labels_csv
from .walkforward import (
    Window,
    WindowPlan,
    make_windows,
    parse_records_csv,
    predict_windows,
    records_csv,
    train_windows,
)

logger = logging.getLogger("cdtnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class MissingArtifact(Exception):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path}: run `cdtnet {producer}` first")
        self.path = path
        self.producer = producer


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Config sections (or single ``section.key`` entries) each command exposes as flags.
COMMAND_SECTIONS = {
    "synth": ("data.symbol", "synth"),
    "ingest": ("data",),
    "features": ("features.schema", "features.frame_len", "features.stride", "features.max_gap_minutes",
                 "model.use_indicators"),
    "label": ("label",),
    "train": ("features.train_stride", "model", "walkforward", "run"),
    "predict": (),
    "backtest": ("backtest",),
    "evaluate": ("wfs", "run.deterministic"),
    "report": ("backtest.initial_capital",),
}

# Derived per window rather than set by the user.
HIDDEN = {"model.seed", "model.frame_len"}

HELP = {
    "synth": "generate a seeded synthetic bar series (optionally with a planted pattern)",
    "ingest": "parse and validate a bar CSV, report gaps",
    "features": "compute the feature matrix",
    "label": "label the 2-hour frames Up/Down/Flat",
    "train": "train one network per walk-forward window",
    "predict": "predict every window's test range",
    "backtest": "replay predictions as trades",
    "evaluate": "classification metrics plus backtest summary",
    "report": "aggregate runs into plot-ready CSV series",
}


def _flag_paths(command: str) -> List[str]:
    paths = []
    for entry in COMMAND_SECTIONS[command]:
        if "." in entry:
            paths.append(entry)
        else:
            paths.extend(f"{entry}.{f.name}" for f in fields(SECTIONS[entry]))
    return [p for p in paths if p not in HIDDEN]


def _flag_names(command: str) -> Dict[str, str]:
    """Map ``section.key`` to a flag name; bare ``--key`` unless it collides."""
    paths = _flag_paths(command)
    keys: Dict[str, int] = {}
    for p in paths:
        key = p.split(".")[1]
        keys[key] = keys.get(key, 0) + 1
    out = {}
    for p in paths:
        section, key = p.split(".")
        name = key if keys[key] == 1 else f"{section}_{key}"
        out[p] = "--" + name.replace("_", "-")
    return out


def build_parser() -> argparse.ArgumentParser:
    defaults = PipelineConfig()
    parser = _Parser(prog="cdtnet", description="Cross-data-type CNN trading pipeline.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in COMMAND_SECTIONS:
        p = sub.add_parser(command, help=HELP[command], description=HELP[command])
        p.add_argument("--config", default=None, help="INI config file (default: none, built-in values)")
        p.add_argument("--out", default="run", help="run directory holding the artifacts (default: run)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="generic override, e.g. contract.CL.commission=3.0")
        if command == "report":
            p.add_argument("--runs", nargs="+", default=None,
                           help="run directories to aggregate (default: --out)")
        flags = _flag_names(command)
        for path, flag in flags.items():
            section, key = path.split(".")
            default = cfgmod.format_value(getattr(getattr(defaults, section), key))
            p.add_argument(flag, dest=f"cfg:{path}", default=None, metavar=key.upper(),
                           help=f"[{path}] (default: {default})")
        p.set_defaults(func=COMMANDS[command])
    return parser


def resolve_config(args) -> PipelineConfig:
    """Defaults < config file < --set overrides < named flags."""
    cfg = cfgmod.load_config(args.config)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            overrides[dest[4:]] = value
    return cfgmod.apply_overrides(cfg, overrides)


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------

def _require(out: Path, name: str, producer: str) -> Path:
    p = out / name
    if not p.exists():
        raise MissingArtifact(p, producer)
    return p


def _write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _load_bars(out: Path, symbol: str):
    return parse_bars(_require(out, "bars.csv", "synth` or `cdtnet ingest").read_text(encoding="utf-8"), symbol)


def _feature_meta(out: Path) -> Dict:
    return _read_json(_require(out, "features.json", "features"))


def _dataset(out: Path, cfg: PipelineConfig, stride: Optional[int] = None):
    """Rebuild the 2-hour samples with the feature settings recorded by ``features``."""
    meta = _feature_meta(out)
    _require(out, "features.csv", "features")
    series = _load_bars(out, meta["symbol"])
    schema = parse_schema(meta["schema"])
    fm = build_feature_matrix(series, schema)
    stride = stride or meta["stride"]
    samples = make_samples(series, schema, cfg.label, meta["frame_len"], stride, meta["max_gap_minutes"], features=fm)
    return series, schema, fm, samples


def _attach_labels(out: Path, samples):
    ts, labels = parse_labels_csv(_require(out, "labels.csv", "label").read_text(encoding="utf-8"))
    if ts.size != samples.timestamps.size or np.any(ts != samples.timestamps):
        raise DataError("labels.csv does not match the current frame grid; re-run `cdtnet label`")
    return replace(samples, y=labels)


def _plan_dict(plan: WindowPlan) -> Dict:
    return asdict(plan)


def _window_dict(w: Window) -> Dict:
    return {"index": w.index, "train": list(w.train), "val": list(w.val), "test": list(w.test)}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, out: Path, args) -> None:
    s = cfg.synth
    spec = SyntheticSpec(s.length, s.seed, cfg.regime(), cfg.planted(), symbol=cfg.data.symbol)
    detail = generate_synthetic_detail(spec)
    series = detail.series
    atomic_write(out / "bars.csv", serialize_bars(series))
    atomic_write(out / "gaps.json", validate_series(series).to_json())
    kinds = np.bincount(detail.site_kind, minlength=4)
    enforced = detail.site_classes[detail.site_classes >= 0]
    _write_json(out / "synth.json", {
        "symbol": series.symbol,
        "bars": len(series),
        "synth": asdict(s),
        "frames": {"plain": int(kinds[0]), "site": int(kinds[1]), "price_decoy": int(kinds[2]), "volume_decoy": int(kinds[3])},
        "enforced_labels": int(enforced.size),
    })
    logger.info("synth: %d bars -> %s", len(series), out / "bars.csv")


def cmd_ingest(cfg: PipelineConfig, out: Path, args) -> None:
    if not cfg.data.input:
        raise ConfigError("data.input: no input file given (use --input)")
    src = Path(cfg.data.input)
    if not src.exists():
        raise ConfigError(f"data.input: {src} does not exist")
    series = parse_bars(src.read_bytes(), cfg.data.symbol)
    report = validate_series(series)
    atomic_write(out / "bars.csv", serialize_bars(series))
    atomic_write(out / "gaps.json", report.to_json())
    logger.info("ingest: %d bars, %d gaps (%d missing bars)", len(series), report.count, report.missing_bars)


def cmd_features(cfg: PipelineConfig, out: Path, args) -> None:
    series = _load_bars(out, cfg.data.symbol)
    schema = cfg.schema()
    fm = build_feature_matrix(series, schema)
    atomic_write(out / "features.csv", feature_matrix_csv(fm))
    f = cfg.features
    _write_json(out / "features.json", {
        "symbol": series.symbol,
        "schema": schema.to_text(),
        "rows": list(schema.names),
        "row_kinds": list(schema.row_kinds),
        "depth": schema.depth,
        "columns": len(series),
        "first_valid": fm.first_valid,
        "frame_len": f.frame_len,
        "stride": f.stride,
        "max_gap_minutes": f.max_gap_minutes,
    })
    logger.info("features: %d rows x %d columns", schema.depth, len(series))


def cmd_label(cfg: PipelineConfig, out: Path, args) -> None:
    series, schema, fm, samples = _dataset(out, cfg)
    ends = np.searchsorted(series.timestamps, samples.timestamps)
    atomic_write(out / "labels.csv", labels_csv(samples, series.close[ends]))
    labels = [int(v) for v in samples.y if v != NO_LABEL]
    _write_json(out / "labels.json", {
        "label": asdict(cfg.label),
        "samples": int(samples.y.size),
        "labeled": len(labels),
        "balance": class_balance(labels),
    })
    logger.info("label: %d frames, %d labeled", samples.y.size, len(labels))


def cmd_train(cfg: PipelineConfig, out: Path, args) -> None:
    _require(out, "labels.csv", "label")
    series, schema, fm, samples = _dataset(out, cfg)
    data = _attach_labels(out, samples).labeled()
    meta = _feature_meta(out)
    model_cfg = replace(cfg.model, frame_len=meta["frame_len"])

    pool = None
    if cfg.features.train_stride != meta["stride"]:
        label_cfg = LabelConfig(**_read_json(_require(out, "labels.json", "label"))["label"])
        pool = make_samples(series, schema, label_cfg, meta["frame_len"], cfg.features.train_stride,
                            meta["max_gap_minutes"], features=fm).labeled()

    plan = cfg.walkforward
    windows = make_windows(len(data), plan)
    t0 = time.perf_counter()
    models, summaries = train_windows(data, windows, model_cfg, cfg.run.seed, cfg.run.workers, pool)
    elapsed = time.perf_counter() - t0

    model_dir = out / "models"
    for w, m in zip(windows, models):
        m.save(model_dir / f"window_{w.index:03d}")
    doc = {
        "master_seed": cfg.run.seed,
        "plan": _plan_dict(plan),
        "model": model_cfg.to_dict(),
        "samples": len(data),
        "train_stride": cfg.features.train_stride,
        "windows": [dict(_window_dict(w), **s.to_dict()) for w, s in zip(windows, summaries)],
    }
    if not cfg.run.deterministic:
        doc["elapsed_seconds"] = elapsed
    _write_json(out / "windows.json", doc)
    logger.info("train: %d windows in %.1fs", len(windows), elapsed)


def cmd_predict(cfg: PipelineConfig, out: Path, args) -> None:
    doc = _read_json(_require(out, "windows.json", "train"))
    _, _, _, samples = _dataset(out, cfg)
    data = _attach_labels(out, samples).labeled()
    if len(data) != doc["samples"]:
        raise DataError("labeled samples changed since `cdtnet train`; re-run it")
    windows = [Window(w["index"], tuple(w["train"]), tuple(w["val"]), tuple(w["test"])) for w in doc["windows"]]
    models = []
    for w in windows:
        stem = out / "models" / f"window_{w.index:03d}"
        _require(out, f"models/window_{w.index:03d}.bin", "train")
        models.append(TrainedModel.load(stem))
    records = predict_windows(data, windows, models)
    atomic_write(out / "predictions.csv", records_csv(records))
    logger.info("predict: %d records", len(records))


def cmd_backtest(cfg: PipelineConfig, out: Path, args) -> None:
    records = parse_records_csv(_require(out, "predictions.csv", "predict").read_text(encoding="utf-8"))
    meta = _feature_meta(out)
    series = _load_bars(out, meta["symbol"])
    spec = cfg.contract()
    end = None
    if records:
        # last position is closed when its 2-hour prediction horizon expires
        end = records[-1].timestamp + timedelta(minutes=5 * meta["frame_len"])
    result = run_backtest([r.predicted for r in records], [r.timestamp for r in records], series, spec,
                          cfg.backtest.initial_capital, end_time=end)
    stats = equity_stats(result.equity)
    atomic_write(out / "ledger.csv", ledger_csv(result.trades))
    atomic_write(out / "equity.csv", equity_csv(result.equity))
    atomic_write(out / "stats.json", stats_json(stats, contract=cfg.backtest.contract, trades=len(result.trades),
                                                initial_capital=cfg.backtest.initial_capital,
                                                final_capital=result.final_capital))
    logger.info("backtest: %d trades, final capital %.2f", len(result.trades), result.final_capital)


def cmd_evaluate(cfg: PipelineConfig, out: Path, args) -> None:
    records = parse_records_csv(_require(out, "predictions.csv", "predict").read_text(encoding="utf-8"))
    m = confusion([r.predicted for r in records], [r.true for r in records])
    doc = metrics_dict(m, cfg.wfs)
    doc["predictions"] = len(records)
    doc["windows"] = len({r.window for r in records})
    wdoc_path = out / "windows.json"
    if wdoc_path.exists():
        wdoc = _read_json(wdoc_path)
        doc["variant"] = wdoc["model"]["variant"]
        doc["master_seed"] = wdoc["master_seed"]
    meta_path = out / "features.json"
    if meta_path.exists():
        doc["symbol"] = _read_json(meta_path)["symbol"]
    stats_path = out / "stats.json"
    if stats_path.exists():
        st = _read_json(stats_path)
        doc["backtest"] = {k: st[k] for k in ("average_annual_return", "sharpe_ratio", "cumulative_return",
                                              "max_drawdown", "months", "trades")}
    if not cfg.run.deterministic:
        doc["generated_unix"] = time.time()
    _write_json(out / "metrics.json", doc)
    logger.info("evaluate: wfs %.4f accuracy %.4f", doc["wfs"], doc["accuracy"])


def cmd_report(cfg: PipelineConfig, out: Path, args) -> None:
    runs = [Path(r) for r in (args.runs or [str(out)])]
    cum_lines = ["run,timestamp,cumulative_return"]
    month_lines = ["run,month,return"]
    summary_lines = ["run,variant,symbol,wfs,accuracy,average_annual_return,sharpe_ratio,cumulative_return,max_drawdown"]
    rows = []
    for run in runs:
        metrics = _read_json(_require(run, "metrics.json", "evaluate"))
        curve = parse_equity_csv(_require(run, "equity.csv", "backtest").read_text(encoding="utf-8"),
                                 initial=cfg.backtest.initial_capital)
        name = run.name or str(run)
        for t, c in zip(curve.timestamps, curve.capital):
            cum_lines.append(f"{name},{t:%Y-%m-%d %H:%M},{c / curve.initial - 1.0!r}")
        stats = equity_stats(curve)
        for mr in stats["monthly_returns"]:
            month_lines.append(f"{name},{mr['month']},{mr['return']!r}")
        sharpe = stats["sharpe_ratio"]
        summary_lines.append(",".join([
            name, metrics.get("variant", ""), metrics.get("symbol", ""), repr(metrics["wfs"]), repr(metrics["accuracy"]),
            repr(stats["average_annual_return"]), "undefined" if sharpe is None else repr(sharpe),
            repr(stats["cumulative_return"]), repr(stats["max_drawdown"]),
        ]))
        rows.append({"instrument": metrics.get("symbol", "all"), "wfs": metrics["wfs"], "accuracy": metrics["accuracy"],
                     "aar": stats["average_annual_return"], "sharpe": sharpe})

    rdir = out / "report"
    atomic_write(rdir / "cumulative_return.csv", "\n".join(cum_lines) + "\n")
    atomic_write(rdir / "monthly_returns.csv", "\n".join(month_lines) + "\n")
    atomic_write(rdir / "summary.csv", "\n".join(summary_lines) + "\n")
    counts: Dict[str, int] = {}
    for r in rows:
        counts[r["instrument"]] = counts.get(r["instrument"], 0) + 1
    usable = [r for r in rows if counts[r["instrument"]] >= 3]
    if len(usable) < len(rows):
        logger.warning("report: correlations need at least 3 runs per instrument; skipping %d run(s)", len(rows) - len(usable))
    atomic_write(rdir / "correlation.csv", correlation_csv(metric_correlation_report(usable) if usable else []))
    logger.info("report: %d run(s) -> %s", len(runs), rdir)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "label": cmd_label,
    "train": cmd_train,
    "predict": cmd_predict,
    "backtest": cmd_backtest,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        args.func(cfg, out, args)
    except (ConfigError, MissingArtifact) as exc:
        print(f"cdtnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"cdtnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DegenerateWindow, LeakageError, ValueError) as exc:
        print(f"cdtnet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
