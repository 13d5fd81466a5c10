"""
INI-style pipeline configuration.

Every section maps onto one dataclass; unknown keys and unparsable values
raise ``ConfigError`` naming the ``section.key`` path. Contract specs live in
``[contract.<SYMBOL>]`` sections and extend the built-in table.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .backtest import CONTRACTS, ContractSpec
from .indicators import FeatureSchema, SchemaError, parse_schema
from .labeling import LabelConfig
from .market_data import PlantedPattern, Regime
from .metrics import WfsParams
from .model import ModelConfig
from .walkforward import WindowPlan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    symbol: str = "SYN"
    input: str = ""


@dataclass(frozen=True)
class SynthConfig:
    length: int = 24_000
    seed: int = 7
    base_price: float = 1.0
    drift: float = 0.0
    volatility: float = 0.001
    base_volume: int = 500
    planted: bool = True
    site_rate: float = 0.5
    decoy_rate: float = 0.2
    probability: float = 1.0
    step: float = 6.0
    volume_spike: float = 6.0


@dataclass(frozen=True)
class FeatureConfig:
    schema: str = "auto"  # auto | raw5 | default46 | custom row list
    frame_len: int = 24
    stride: int = 24
    train_stride: int = 24
    max_gap_minutes: int = 30


@dataclass(frozen=True)
class BacktestConfig:
    contract: str = "CL"
    initial_capital: float = 100_000.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    deterministic: bool = True


SECTIONS = {
    "data": DataConfig,
    "synth": SynthConfig,
    "features": FeatureConfig,
    "label": LabelConfig,
    "model": ModelConfig,
    "walkforward": WindowPlan,
    "backtest": BacktestConfig,
    "wfs": WfsParams,
    "run": RunConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = DataConfig()
    synth: SynthConfig = SynthConfig()
    features: FeatureConfig = FeatureConfig()
    label: LabelConfig = LabelConfig()
    model: ModelConfig = ModelConfig()
    walkforward: WindowPlan = WindowPlan()
    backtest: BacktestConfig = BacktestConfig()
    wfs: WfsParams = WfsParams()
    run: RunConfig = RunConfig()
    contracts: Tuple[Tuple[str, ContractSpec], ...] = tuple(CONTRACTS.items())

    def schema(self) -> FeatureSchema:
        text = self.features.schema
        if text == "auto":
            text = "default46" if self.model.use_indicators else "raw5"
        try:
            return parse_schema(text)
        except SchemaError as exc:
            raise ConfigError(f"features.schema: {exc}") from None

    def contract(self) -> ContractSpec:
        table = dict(self.contracts)
        if self.backtest.contract not in table:
            raise ConfigError(f"backtest.contract: unknown contract {self.backtest.contract!r} (known: {sorted(table)})")
        return table[self.backtest.contract]

    def regime(self) -> Regime:
        s = self.synth
        return Regime(s.base_price, s.drift, s.volatility, s.base_volume)

    def planted(self) -> Optional[PlantedPattern]:
        s = self.synth
        if not s.planted:
            return None
        return PlantedPattern(
            site_rate=s.site_rate, decoy_rate=s.decoy_rate, probability=s.probability, step=s.step,
            volume_spike=s.volume_spike, alpha=self.label.alpha, vol_window=self.label.vol_window,
            frame_len=self.features.frame_len,
        )


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------

def _parse_value(raw: str, default: Any, path: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                # "4x32, 3x64"
                return tuple(tuple(int(p) for p in item.strip().lower().split("x")) for item in raw.split(",") if item.strip())
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join("x".join(str(p) for p in item) for item in v)
        return ", ".join(str(p) for p in v)
    return str(v)


def _build(cls, section: str, values: Dict[str, str], base):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        kwargs[key] = _parse_value(raw, getattr(base, key), f"{section}.{key}")
    try:
        return replace(base, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _contract(name: str, values: Dict[str, str], base: Optional[ContractSpec]) -> ContractSpec:
    base = base or ContractSpec(0.0, 0.0, 1.0, 0.0, 1)
    return _build(ContractSpec, f"contract.{name}", values, base)


def apply_overrides(cfg: PipelineConfig, overrides: Dict[str, str]) -> PipelineConfig:
    """Apply ``{"section.key": "value"}`` string overrides."""
    grouped: Dict[str, Dict[str, str]] = {}
    for path, value in overrides.items():
        section, _, key = path.rpartition(".")
        if not section:
            raise ConfigError(f"{path}: override must be section.key")
        grouped.setdefault(section, {})[key] = value
    contracts = dict(cfg.contracts)
    for section, values in grouped.items():
        if section.startswith("contract."):
            name = section.split(".", 1)[1]
            contracts[name] = _contract(name, values, contracts.get(name))
        elif section in SECTIONS:
            cfg = replace(cfg, **{section: _build(SECTIONS[section], section, values, getattr(cfg, section))})
        else:
            raise ConfigError(f"{section}: unknown section")
    return replace(cfg, contracts=tuple(contracts.items()))


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    overrides = {f"{s}.{k}": v for s in parser.sections() for k, v in parser.items(s)}
    return apply_overrides(PipelineConfig(), overrides)


def load_config(path: Optional[str]) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(p.read_text(encoding="utf-8"))


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {format_value(getattr(obj, f.name))}")
        lines.append("")
    for name, spec in cfg.contracts:
        lines.append(f"[contract.{name}]")
        for f in fields(spec):
            lines.append(f"{f.name} = {format_value(getattr(spec, f.name))}")
        lines.append("")
    return "\n".join(lines)
