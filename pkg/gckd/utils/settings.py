"""Experiment settings: section dataclasses, the INI document and its fingerprint."""
import configparser
from dataclasses import asdict, dataclass, field, fields, replace
import hashlib
import io
import logging
import os
import typing
from typing import Any, Dict, Optional, Tuple

from gckd.data.synth import DatasetSpec
from gckd.errors import ConfigError
from gckd.losses.report import LossConfig
from gckd.model.graph import GraphConfig
from gckd.model.memory import MemoryConfig
from gckd.model.params import ModelConfig
from gckd.training.config import MODES, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = "gckd_settings.ini"
SPLITS = ("target", "source")


@dataclass
class ExperimentSettings:
    """Run-level settings: ablation mode, output location and sweeps."""

    mode: str = "cmkd_gmp"  # baseline | cmkd | cmkd_gmp
    out_dir: str = "runs/default"
    seeds: int = 5  # ablation seeds, train.seed + 0 .. seeds - 1
    workers: int = 1  # ablation worker processes
    split: str = "target"  # evaluation split
    ks: Tuple[int, ...] = (1, 5, 10)
    transfer_shifts: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    delta_sweep: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"experiment.mode must be one of {MODES}, got {self.mode!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"experiment.split must be one of {SPLITS}, got {self.split!r}")
        if self.seeds < 1 or self.workers < 1:
            raise ConfigError("experiment.seeds and experiment.workers must be >= 1")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError(f"experiment.ks must be positive integers, got {self.ks}")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def validate(self) -> "ExperimentConfig":
        for section in SECTIONS:
            getattr(self, section).validate()
        return self


# Section name -> section dataclass, in document order
SECTIONS: Dict[str, type] = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, kind: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if typing.get_origin(kind) is tuple:
            item_kind = typing.get_args(kind)[0]
            return tuple(_parse_value(part, item_kind, key) for part in raw.split(",") if part.strip())
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from e


def dumps(config: ExperimentConfig) -> str:
    """Canonical INI text: sections and keys in declaration order."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for name, value in asdict(getattr(config, section)).items():
            lines.append(f"{name} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> ExperimentConfig:
    """Parse an INI document; missing keys keep their defaults, unknown ones are rejected."""
    parser = configparser.RawConfigParser()
    parser.optionxform = str
    try:
        parser.read_file(io.StringIO(text))
    except configparser.Error as e:
        raise ConfigError(f"malformed settings document: {e}") from e
    config = ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown settings section [{section}]")
        cls = SECTIONS[section]
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_value(raw, hints[key], f"{section}.{key}")
        setattr(config, section, replace(getattr(config, section), **values))
    return config.validate()


def fingerprint(config: ExperimentConfig) -> str:
    """SHA-256 hex digest of the canonical document."""
    return hashlib.sha256(dumps(config).encode("utf-8")).hexdigest()


def dataset_fingerprint(spec: DatasetSpec) -> str:
    config = ExperimentConfig(dataset=spec)
    text = dumps(config).split("\n\n")[0]
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def comparison_fingerprint(config: ExperimentConfig) -> str:
    """Fingerprint with the per-run knobs (mode, seed, output location) neutralized.

    Runs that share it may be compared in one ablation table.
    """
    neutral = replace(
        config,
        train=replace(config.train, seed=0),
        experiment=replace(config.experiment, mode=MODES[0], out_dir="", workers=1),
    )
    return fingerprint(neutral)


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, mode: Optional[str] = None,
                   out_dir: Optional[str] = None, split: Optional[str] = None) -> ExperimentConfig:
    """Apply command-line overrides on top of a loaded document."""
    experiment = config.experiment
    if mode is not None:
        experiment = replace(experiment, mode=mode)
    if out_dir is not None:
        experiment = replace(experiment, out_dir=str(out_dir))
    if split is not None:
        experiment = replace(experiment, split=split)
    train = config.train if seed is None else replace(config.train, seed=seed)
    return replace(config, train=train, experiment=experiment).validate()


class SettingsManager:
    """Loads, caches and saves the experiment settings document."""

    def __init__(self, db_path: str = DEFAULT_SETTINGS_PATH):
        self.db_path = db_path
        self.settings_cache: Optional[ExperimentConfig] = None

    def get_settings(self) -> ExperimentConfig:
        """Settings from the document, or defaults when it does not exist."""
        if self.settings_cache is None:
            self.settings_cache = self._load_settings()
        return self.settings_cache

    def save_settings(self, config: ExperimentConfig) -> None:
        config.validate()
        self.settings_cache = config
        try:
            with open(self.db_path, "w", encoding="utf-8", newline="\n") as f:
                f.write(dumps(config))
        except OSError as e:
            logger.error(f"Failed to save settings: {e}")
            raise

    def reset_to_default(self) -> ExperimentConfig:
        default_settings = ExperimentConfig()
        self.save_settings(default_settings)
        return default_settings

    def _load_settings(self) -> ExperimentConfig:
        if not os.path.exists(self.db_path):
            logger.info(f"No settings file at {self.db_path}; using defaults")
            return ExperimentConfig()
        with open(self.db_path, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            return loads(text)
        except ConfigError as e:
            logger.error(f"Failed to load settings file {self.db_path}: {e}")
            raise
