"""Experiment configuration: YAML file, environment and command-line overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import yaml
from loguru import logger

from .arima import BOUND
from .deepforecast import CellType, ModelConfig, model_grid
from .ingest import DEFAULT_MIN_LENGTH
from .scurve import GridCell, default_grid
from .seriesstore import CONTEXT_LEN, HORIZON

SEED_ENV = "TECHCAST_SEED"
METHODS = ("FIT", "ARIMA", "RNN")


class ConfigError(ValueError):
    """Raised for unreadable, unknown or out-of-range configuration values."""


@dataclass(frozen=True)
class ScurveOptions:
    l_multipliers: Tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    l_upper_multiplier: float = 10.0
    k_inits: Tuple[float, ...] = (0.01, 0.05, 0.2, 0.5)
    k_bounds: Tuple[float, float] = (1e-4, 2.0)
    t0_fractions: Tuple[float, ...] = (0.25, 0.5, 1.0, 1.5)
    t0_bounds: Tuple[float, float] = (-1.0, 3.0)
    max_iter: int = 200
    tol: float = 1e-10

    def grid(self, history) -> List[GridCell]:
        return default_grid(
            history,
            l_multipliers=self.l_multipliers,
            l_upper_multiplier=self.l_upper_multiplier,
            k_inits=self.k_inits,
            k_bounds=self.k_bounds,
            t0_fractions=self.t0_fractions,
            t0_bounds=self.t0_bounds,
        )


@dataclass(frozen=True)
class ArimaOptions:
    n_starts: int = 3
    max_iter: int = 4000
    bound: float = BOUND


@dataclass(frozen=True)
class RnnOptions:
    cells: Tuple[str, ...] = (CellType.VANILLA.value, CellType.LSTM.value)
    hidden_sizes: Tuple[int, ...] = (16, 32, 64)
    epochs: int = 750
    batch_size: int = 64
    learning_rate: float = 0.001
    mc_samples: int = 100
    context_len: int = CONTEXT_LEN
    horizon: int = HORIZON

    def model_configs(self, seed: int) -> List[ModelConfig]:
        base = ModelConfig(
            context_len=self.context_len,
            horizon=self.horizon,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=seed,
            mc_samples=self.mc_samples,
        )
        return model_grid(
            [CellType(c) for c in self.cells], self.hidden_sizes, base=base
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark run depends on."""

    series_path: str = "series.csv"
    corpus_path: Optional[str] = None
    output_dir: str = "techcast-output"
    min_length: int = DEFAULT_MIN_LENGTH
    seed: int = 0
    val_fraction: float = 0.10
    test_fraction: float = 0.10
    methods: Tuple[str, ...] = METHODS
    n_jobs: int = 1
    scurve: ScurveOptions = field(default_factory=ScurveOptions)
    arima: ArimaOptions = field(default_factory=ArimaOptions)
    rnn: RnnOptions = field(default_factory=RnnOptions)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def with_overrides(self, **changes) -> ExperimentConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        if "methods" in changes:
            changes["methods"] = parse_methods(changes["methods"])
        return dataclasses.replace(self, **changes)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def parse_methods(methods) -> Tuple[str, ...]:
    """Normalizes 'fit,arima' or ['FIT', 'ARIMA'] to canonical method names."""
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m.strip()]
    names = []
    for method in methods:
        name = str(method).strip().upper()
        if name not in METHODS:
            raise ConfigError(f"Unknown method {method!r}, expected one of {METHODS}")
        if name not in names:
            names.append(name)
    return tuple(m for m in METHODS if m in names)


def validate(config: ExperimentConfig):
    """Checks ranges and non-empty values.

    Raises:
        ConfigError: On the first invalid value.

    """
    for name in ("val_fraction", "test_fraction"):
        value = getattr(config, name)
        if not 0 < value < 0.5:
            raise ConfigError(f"{name} must be in (0, 0.5), got {value}")
    if config.min_length < 3 * HORIZON:
        raise ConfigError(
            f"min_length must be >= {3 * HORIZON}, got {config.min_length}"
        )
    for name in ("series_path", "output_dir"):
        if not str(getattr(config, name)).strip():
            raise ConfigError(f"{name} must not be empty")
    if config.n_jobs == 0:
        raise ConfigError("n_jobs must not be 0")
    if tuple(config.methods) != parse_methods(config.methods):
        raise ConfigError(f"Invalid method list {config.methods}")

    s = config.scurve
    if not (s.l_multipliers and s.k_inits and s.t0_fractions):
        raise ConfigError("S-curve grid must not be empty")
    if s.k_bounds[0] <= 0 or s.k_bounds[0] >= s.k_bounds[1]:
        raise ConfigError(f"Invalid k bounds {s.k_bounds}")
    if s.t0_bounds[0] >= s.t0_bounds[1]:
        raise ConfigError(f"Invalid t0 bounds {s.t0_bounds}")
    if s.max_iter < 1:
        raise ConfigError("S-curve max_iter must be positive")

    a = config.arima
    if a.n_starts < 1 or a.max_iter < 1 or not 0 < a.bound < 1:
        raise ConfigError(f"Invalid ARIMA options {a}")

    r = config.rnn
    if not r.cells or not r.hidden_sizes:
        raise ConfigError("RNN grid must not be empty")
    for cell in r.cells:
        try:
            CellType(cell)
        except ValueError:
            raise ConfigError(f"Unknown cell {cell!r}") from None
    if any(h < 1 for h in r.hidden_sizes):
        raise ConfigError(f"Hidden sizes must be positive, got {r.hidden_sizes}")
    if min(r.epochs, r.batch_size, r.mc_samples, r.context_len, r.horizon) < 1:
        raise ConfigError(f"Invalid RNN options {r}")
    if not r.learning_rate > 0:
        raise ConfigError(f"learning_rate must be positive, got {r.learning_rate}")


def _section(cls, data, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in {name!r}: {unknown}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid section {name!r}: {e}") from e


def config_from_dict(data: Optional[dict]) -> ExperimentConfig:
    """Builds a config from plain data, materializing every default.

    Raises:
        ConfigError: On unknown keys or invalid values.

    """
    data = dict(data or {})
    nested = {
        "scurve": _section(ScurveOptions, data.pop("scurve", None), "scurve"),
        "arima": _section(ArimaOptions, data.pop("arima", None), "arima"),
        "rnn": _section(RnnOptions, data.pop("rnn", None), "rnn"),
    }
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {unknown}")
    if "methods" in data:
        data["methods"] = parse_methods(data["methods"])
    try:
        return ExperimentConfig(**data, **nested)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def apply_env(config: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Applies the TECHCAST_SEED override, if set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return config
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    logger.info(f"Seed {seed} taken from {SEED_ENV}")
    return dataclasses.replace(config, seed=seed)


def load_config(path=None, environ=None) -> ExperimentConfig:
    """Reads a YAML experiment file (or the defaults) and applies the environment."""
    data = None
    if path is not None:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"Cannot read {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a mapping")
    return apply_env(config_from_dict(data), environ)


def write_config(config: ExperimentConfig, path) -> Path:
    """Echoes the resolved configuration, all defaults included."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None),
        encoding="utf-8",
    )
    return path
