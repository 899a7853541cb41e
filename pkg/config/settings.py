#!/usr/bin/env python3
"""
CPC-SNN Centralized Configuration Management
Single source of truth for data, encoder, CPC and experiment settings
"""

import os
import logging
import typing
from pathlib import Path
from typing import Optional, Dict, Any, Tuple
from dataclasses import dataclass, field, fields, asdict
from dotenv import load_dotenv, dotenv_values

from utils.exceptions import ConfigurationError
from utils.logger import get_logger as _build_logger, LOG_FORMAT

# Load environment variables
load_dotenv(dotenv_path=os.getenv("CPCSNN_ENV_FILE", ".env"))

DATASETS = {"MNIST-2500": 250, "MNIST-5000": 500}
ENCODINGS = ("snn_autoencoder", "snn_classifier", "random")
PRECISIONS = ("float32", "float64")

@dataclass
class DataConfig:
    """MNIST ingestion and sequence-pair configuration"""
    mnist_dir: Path = field(default_factory=lambda: Path(os.getenv("CPCSNN_MNIST_DIR", "data/mnist")))
    validation_fraction: float = 0.1
    context_length: int = 4
    prediction_length: int = 4
    wrap: bool = True
    train_batches_per_epoch: int = 64
    validation_batches: int = 10
    frozen_pairs: bool = False
    expected_sha256_train_images: str = ""
    expected_sha256_train_labels: str = ""
    expected_sha256_test_images: str = ""
    expected_sha256_test_labels: str = ""

    def validate(self) -> bool:
        """Validate data configuration"""
        return all([
            0.0 < self.validation_fraction < 1.0,
            self.context_length > 0,
            self.prediction_length > 0,
            self.train_batches_per_epoch > 0,
            self.validation_batches > 0,
        ])

@dataclass
class CodecConfig:
    """Poisson rate coding configuration (times in seconds)"""
    initial_k: float = 2.0
    delta_k: float = 1.0
    s_min: int = 5
    window_s: float = 0.35
    dt_s: float = 0.001
    retry_cap: int = 50

    def validate(self) -> bool:
        """Validate codec configuration"""
        if not (self.initial_k > 0 and self.delta_k > 0 and self.s_min >= 0
                and self.window_s > 0 and self.dt_s > 0 and self.retry_cap >= 0):
            return False
        steps = self.window_s / self.dt_s
        return abs(steps - round(steps)) < 1e-9 * max(1.0, steps)

@dataclass
class StdpConfig:
    """Classifier-encoder network configuration (potentials in mV, times in ms)"""
    n_input: int = 784
    n_exc: int = 400
    v_rest_mv: float = -65.0
    v_reset_mv: float = -60.0
    v_thresh_base_mv: float = -52.0
    tau_mem_exc_ms: float = 100.0
    refractory_exc_ms: float = 5.0
    v_rest_inh_mv: float = -60.0
    v_reset_inh_mv: float = -45.0
    v_thresh_inh_mv: float = -40.0
    tau_mem_inh_ms: float = 10.0
    refractory_inh_ms: float = 2.0
    input_gain_mv: float = 8.0
    exc_inh_kick_mv: float = 25.0
    inhibition_mv: float = 17.0
    v_floor_mv: float = -100.0
    tau_trace_ms: float = 20.0
    eta_post: float = 0.01
    eta_pre: float = 0.0001
    w_max: float = 1.0
    mu: float = 1.0
    theta_plus_mv: float = 0.05
    tau_theta_ms: float = 1e7
    rest_ms: float = 150.0
    column_sum: float = 78.4
    init_weight_low: float = 0.003
    init_weight_high: float = 0.303
    epochs: int = 1
    workers: int = 1

    def validate(self) -> bool:
        """Validate network configuration"""
        return all([
            self.n_input > 0,
            self.n_exc > 0,
            self.v_thresh_base_mv > self.v_rest_mv,
            self.tau_mem_exc_ms > 0,
            self.tau_mem_inh_ms > 0,
            self.tau_trace_ms > 0,
            self.tau_theta_ms > 0,
            self.w_max > 0,
            0 <= self.init_weight_low <= self.init_weight_high <= self.w_max,
            0 < self.column_sum <= self.n_input * self.w_max,
            self.epochs >= 0,
            self.workers >= 1,
        ])

@dataclass
class AutoencoderConfig:
    """Convolutional LIF autoencoder configuration"""
    channels: Tuple[int, ...] = (8, 8)
    kernel_size: int = 3
    stride: int = 2
    beta: float = 0.9
    v_thresh: float = 1.0
    t_steps: int = 25
    surrogate_alpha: float = 2.0
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64

    def validate(self) -> bool:
        """Validate autoencoder configuration"""
        return all([
            len(self.channels) > 0,
            all(c > 0 for c in self.channels),
            self.kernel_size > 0,
            self.stride > 0,
            0.0 < self.beta <= 1.0,
            self.v_thresh > 0,
            self.t_steps >= 1,
            self.surrogate_alpha > 0,
            self.learning_rate >= 0,
            self.epochs >= 0,
            self.batch_size > 0,
        ])

@dataclass
class CpcConfig:
    """CPC head and training schedule"""
    hidden_size: int = 256
    gain_init: float = 5.0
    learning_rate: float = 1e-4
    train_positives: int = 32
    train_negatives: int = 32
    val_positives: int = 10
    val_negatives: int = 10
    max_epochs: int = 100
    early_stop_patience: int = 10
    lr_patience: int = 3
    lr_factor: float = 0.5

    def validate(self) -> bool:
        """Validate CPC schedule"""
        return all([
            self.hidden_size > 0,
            self.learning_rate >= 0,
            self.train_positives > 0,
            self.train_negatives > 0,
            self.val_positives > 0,
            self.val_negatives > 0,
            self.max_epochs > 0,
            self.early_stop_patience >= 1,
            self.lr_patience >= 1,
            0.0 < self.lr_factor < 1.0,
        ])

@dataclass
class ExperimentConfig:
    """Which Table 1 configuration to run and how"""
    dataset: str = "MNIST-2500"
    encoding: str = "snn_autoencoder"
    seeds: Tuple[int, ...] = (1, 2, 3)
    random_dim: int = 400
    precision: str = "float32"
    workers: int = 1
    train_encoders: bool = False
    debug_finite: bool = False
    timezone: str = field(default_factory=lambda: os.getenv("LOCAL_TIMEZONE", "UTC"))

    @property
    def per_class_count(self) -> int:
        return DATASETS[self.dataset]

    def validate(self) -> bool:
        """Validate experiment selection"""
        return all([
            self.dataset in DATASETS,
            self.encoding in ENCODINGS,
            len(self.seeds) > 0,
            self.random_dim > 0,
            self.precision in PRECISIONS,
            self.workers >= 1,
        ])

@dataclass
class PathConfig:
    """Path configuration"""
    out_dir: Path = field(default_factory=lambda: Path(os.getenv("CPCSNN_OUT_DIR", "runs")))
    encoders_dir: Optional[Path] = None

    @property
    def encoders_path(self) -> Path:
        return self.encoders_dir if self.encoders_dir is not None else self.out_dir / "encoders"

    def ensure(self):
        """Create output directories on demand"""
        for path in [self.out_dir, self.encoders_path]:
            path.mkdir(parents=True, exist_ok=True)

@dataclass
class LoggingConfig:
    """Logging configuration"""
    level: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))
    format: str = LOG_FORMAT

    def get_logger(self, name: str, log_file: Optional[Path] = None) -> logging.Logger:
        """Get configured logger"""
        return _build_logger(name, self.level, log_file)

SECTIONS = {
    "data": DataConfig,
    "codec": CodecConfig,
    "stdp": StdpConfig,
    "autoencoder": AutoencoderConfig,
    "cpc": CpcConfig,
    "experiment": ExperimentConfig,
    "paths": PathConfig,
    "logging": LoggingConfig,
}

class Settings:
    """Main settings class"""

    def __init__(self, overrides: Optional[Dict[str, Dict[str, Any]]] = None):
        self.data = DataConfig()
        self.codec = CodecConfig()
        self.stdp = StdpConfig()
        self.autoencoder = AutoencoderConfig()
        self.cpc = CpcConfig()
        self.experiment = ExperimentConfig()
        self.paths = PathConfig()
        self.logging = LoggingConfig()

        for section, values in (overrides or {}).items():
            for key, value in values.items():
                self.set(section, key, value)

        # Validate all configurations
        self._validate()

    def _validate(self):
        """Validate all configurations"""
        for name in SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "validate") and not section.validate():
                raise ConfigurationError(f"Invalid {name} configuration", error_code="invalid_section",
                                         details={"section": name, "values": _plain(asdict(section))})

    def set(self, section: str, key: str, value: Any):
        """Set one key, converting strings to the annotated type"""
        if section not in SECTIONS:
            raise ConfigurationError(f"Unknown configuration section: {section}", error_code="unknown_key",
                                     details={"key": f"{section}.{key}"})
        target = getattr(self, section)
        hints = typing.get_type_hints(type(target))
        if key not in {f.name for f in fields(target)}:
            raise ConfigurationError(f"Unknown configuration key: {section}.{key}", error_code="unknown_key",
                                     details={"key": f"{section}.{key}"})
        setattr(target, key, _convert(value, hints[key], f"{section}.{key}"))

    def get_logger(self, name: str, log_file: Optional[Path] = None) -> logging.Logger:
        """Get configured logger"""
        return self.logging.get_logger(name, log_file)

    def to_dict(self) -> Dict[str, Any]:
        """Convert settings to dictionary"""
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value

def _convert(raw: Any, annotation: Any, key: str) -> Any:
    """Typed parsing of one config value"""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    try:
        if origin is typing.Union and type(None) in args:
            if text.lower() in ("", "none"):
                return None
            inner = next(a for a in args if a is not type(None))
            return _convert(text, inner, key)
        if origin in (tuple, Tuple):
            parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
            return tuple(_convert(p, args[0], key) for p in parts)
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is Path:
            return Path(text)
        return text
    except (ValueError, StopIteration) as e:
        raise ConfigurationError(f"Invalid value for {key}: {raw!r} ({e})", error_code="bad_value",
                                 details={"key": key, "value": raw}) from e

def parse_config_file(path: Path) -> Dict[str, Dict[str, str]]:
    """Read a flat `section.key = value` file; every key must be dotted"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}", error_code="missing_config",
                                 details={"path": str(path)})
    grouped: Dict[str, Dict[str, str]] = {}
    for full_key, value in dotenv_values(path).items():
        if "." not in full_key:
            raise ConfigurationError(f"Config key must look like section.key: {full_key}",
                                     error_code="unknown_key", details={"key": full_key})
        section, key = full_key.split(".", 1)
        grouped.setdefault(section, {})[key] = "" if value is None else value
    return grouped

def load_settings(config_path: Optional[Path] = None,
                  overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Settings:
    """Build settings from defaults, an optional config file, then explicit overrides"""
    merged: Dict[str, Dict[str, Any]] = {}
    if config_path is not None:
        for section, values in parse_config_file(config_path).items():
            merged.setdefault(section, {}).update(values)
    for section, values in (overrides or {}).items():
        merged.setdefault(section, {}).update(values)
    return Settings(merged)

# Global settings instance
settings = Settings()

# Convenience functions
def get_logger(name: str) -> logging.Logger:
    """Get configured logger"""
    return settings.get_logger(name)
