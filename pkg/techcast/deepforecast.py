"""Autoregressive recurrent forecaster trained by Gaussian likelihood.

One network is trained on the mean-scaled training samples of every train
category. At forecast time it reads the conditioning range teacher-forced, then
draws Monte-Carlo paths by feeding each sampled value back as the next input.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .metrics import mape
from .recurrent import (
    PARAM_NAMES,
    Adam,
    CellType,
    NetWeights,
    cell_forward,
    gaussian_nll,
    heads,
    init_weights,
    initial_state,
    sequence_loss,
    sequence_loss_and_grads,
    zero_weights,
)
from .seriesstore import CONTEXT_LEN, HORIZON, ForecastWindow, TrainSample
from .utils import progress, timer_func

__all__ = [
    "CellType",
    "ModelConfig",
    "NetState",
    "NetWeights",
    "StepDistribution",
    "ForecastPaths",
    "TrainResult",
    "SelectionResult",
    "TrainingDivergedError",
    "ModelSelectionError",
    "init_weights",
    "zero_weights",
    "step",
    "nll",
    "train",
    "gradient_check",
    "forecast",
    "forecast_scaled",
    "mean_unroll",
    "select_model",
    "model_grid",
    "save_weights",
    "load_weights",
    "write_loss_curve",
]

CELL_ORDER = (CellType.VANILLA, CellType.LSTM)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss or the network state stops being finite."""


class ModelSelectionError(RuntimeError):
    """Raised when no configuration of the hyperparameter grid could be trained."""


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of one recurrent forecaster."""

    cell: CellType = CellType.LSTM
    hidden_size: int = 32
    context_len: int = CONTEXT_LEN
    horizon: int = HORIZON
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 750
    seed: int = 0
    mc_samples: int = 100

    def __post_init__(self):
        object.__setattr__(self, "cell", CellType(self.cell))
        for name in ("hidden_size", "context_len", "horizon", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be positive, got {self.mc_samples}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def window_len(self) -> int:
        return self.context_len + self.horizon

    @property
    def label(self) -> str:
        return f"{self.cell.value}-{self.hidden_size}"

    def to_dict(self) -> dict:
        data = asdict(self)
        data["cell"] = self.cell.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        return cls(**data)


@dataclass
class NetState:
    """Hidden state of the recurrent layer, plus the cell memory of an LSTM."""

    hidden: np.ndarray
    memory: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, weights: NetWeights) -> NetState:
        h, c = initial_state(weights, 1)
        return cls(h[0], None if c is None else c[0])

    def is_finite(self) -> bool:
        if not np.isfinite(self.hidden).all():
            return False
        return self.memory is None or bool(np.isfinite(self.memory).all())


@dataclass(frozen=True)
class StepDistribution:
    """Gaussian over the next scaled value."""

    mu: float
    sigma: float


@dataclass(frozen=True, eq=False)
class ForecastPaths:
    """Sampled unscaled paths (mc_samples x horizon) and their per-step mean."""

    paths: np.ndarray
    point: np.ndarray
    scale: float


@dataclass
class TrainResult:
    weights: NetWeights
    losses: List[float]
    config: ModelConfig


@dataclass
class SelectionResult:
    """Outcome of the hyperparameter search."""

    config: ModelConfig
    weights: NetWeights
    losses: List[float]
    scores: Dict[str, float] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)


def step(
    prev_value: float, state: NetState, weights: NetWeights
) -> Tuple[StepDistribution, NetState]:
    """Advances the network by one month.

    Args:
        prev_value (float): Previous scaled value fed as input.
        state (NetState): Current recurrent state.
        weights (NetWeights): Network weights.

    Returns:
        Tuple[StepDistribution, NetState]: Distribution of the current value and
        the new state.

    Raises:
        ValueError: If the input is not finite.
        TrainingDivergedError: If the weights or the state are not finite.

    """
    if not np.isfinite(prev_value):
        raise ValueError(f"Non-finite input {prev_value}")
    if not weights.is_finite() or not state.is_finite():
        raise TrainingDivergedError("Non-finite weights or state")
    x = np.array([[float(prev_value)]])
    h = state.hidden[None, :]
    c = None if state.memory is None else state.memory[None, :]
    h, c, _ = cell_forward(weights, x, h, c)
    mu, _, sigma = heads(weights, h)
    new_state = NetState(h[0], None if c is None else c[0])
    return StepDistribution(float(mu[0]), float(sigma[0])), new_state


def nll(dist: StepDistribution, observed: float) -> float:
    """Gaussian negative log-likelihood of one observation."""
    if not dist.sigma > 0:
        raise ValueError(f"sigma must be positive, got {dist.sigma}")
    value = gaussian_nll(
        np.array([dist.mu]), np.array([dist.sigma]), np.array([observed])
    )
    return float(value[0])


def _stack(samples: Sequence[TrainSample], config: ModelConfig) -> np.ndarray:
    data = np.stack([np.asarray(s.scaled_values, dtype=np.float64) for s in samples])
    if data.shape[1] != config.window_len:
        raise ValueError(
            f"Training samples must hold {config.window_len} values, got {data.shape[1]}"
        )
    return data


@timer_func
def train(samples: Sequence[TrainSample], config: ModelConfig) -> TrainResult:
    """Trains a network on mean-scaled samples by minibatch Adam.

    The loss is the mean Gaussian NLL over the prediction range of each sample,
    with observed values fed as inputs throughout. Batches are reshuffled every
    epoch by a generator seeded with config.seed, which also draws the initial
    weights, so identical inputs give identical weights.

    Args:
        samples (Sequence[TrainSample]): Training samples of context_len + horizon
            values each.
        config (ModelConfig): Network and optimizer settings.

    Returns:
        TrainResult: Final weights and the mean training loss of every epoch.

    Raises:
        ValueError: If there is no sample or a sample has the wrong length.
        TrainingDivergedError: If a batch loss is not finite.

    """
    if len(samples) == 0:
        raise ValueError("Cannot train on an empty sample set")
    data = _stack(samples, config)
    n = len(data)
    rng = np.random.default_rng(config.seed)
    weights = init_weights(config.cell, config.hidden_size, rng)
    optimizer = Adam(weights.params, learning_rate=config.learning_rate)
    logger.info(
        f"Training {config.label} on {n:,} samples for {config.epochs} epochs"
    )

    losses = []
    epochs = progress(range(config.epochs), desc=f"Training {config.label}")
    for epoch in epochs:
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            loss, grads = sequence_loss_and_grads(weights, batch, config.context_len)
            if not np.isfinite(loss):
                logger.error(f"{config.label}: loss diverged at epoch {epoch + 1}")
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}")
            optimizer.step(weights.params, grads)
            total += loss * len(batch)
        losses.append(total / n)
        if (epoch + 1) % 50 == 0:
            logger.debug(f"{config.label} epoch {epoch + 1}: loss={losses[-1]:.5f}")

    if not weights.is_finite():
        raise TrainingDivergedError(f"non-finite weights after epoch {config.epochs}")
    logger.info(f"{config.label}: final training loss {losses[-1]:.5f}")
    return TrainResult(weights=weights, losses=losses, config=config)


def gradient_check(
    weights: NetWeights,
    sample,
    epsilon: float = 1e-5,
    n_checks: int = 50,
    seed: int = 0,
    context_len: Optional[int] = None,
) -> float:
    """Compares backpropagated gradients with central finite differences.

    Args:
        weights (NetWeights): Weights at which the gradient is checked.
        sample (TrainSample | array-like): One scaled sequence.
        epsilon (float): Finite-difference step.
        n_checks (int): Number of weight entries drawn at random; all entries are
            checked when the network has fewer.
        seed (int): Seed of the entry draw.
        context_len (int, optional): Defaults to the sample's split index.

    Returns:
        float: Max of |analytic - numeric| / max(|analytic|, |numeric|, 1e-5).

    """
    if isinstance(sample, TrainSample):
        values = sample.scaled_values
        context_len = sample.split_index if context_len is None else context_len
    else:
        values = sample
        context_len = CONTEXT_LEN if context_len is None else context_len
    z = np.asarray(values, dtype=np.float64)[None, :]
    _, grads = sequence_loss_and_grads(weights, z, context_len)

    entries = [
        (name, index)
        for name in PARAM_NAMES
        for index in range(weights.params[name].size)
    ]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(entries), size=min(n_checks, len(entries)), replace=False)

    probe = weights.copy()
    worst = 0.0
    for k in chosen:
        name, index = entries[k]
        flat = probe.params[name].reshape(-1)
        original = flat[index]
        flat[index] = original + epsilon
        loss_plus = sequence_loss(probe, z, context_len)
        flat[index] = original - epsilon
        loss_minus = sequence_loss(probe, z, context_len)
        flat[index] = original

        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[name].reshape(-1)[index]
        denom = max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, abs(analytic - numeric) / denom)
    logger.debug(f"Gradient check over {len(chosen)} weights: max error {worst:.3g}")
    return worst


def _condition(
    scaled_cond: np.ndarray, weights: NetWeights
) -> Tuple[np.ndarray, Optional[np.ndarray], float]:
    """Runs the conditioning range teacher-forced; returns the state and last input."""
    h, c = initial_state(weights, 1)
    prev = 0.0
    for value in scaled_cond:
        h, c, _ = cell_forward(weights, np.array([[prev]]), h, c)
        prev = float(value)
    return h, c, prev


def forecast_scaled(
    scaled_cond: Sequence[float],
    scale: float,
    weights: NetWeights,
    horizon: int = HORIZON,
    mc_samples: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> ForecastPaths:
    """Ancestral sampling from an already scaled conditioning range.

    Args:
        scaled_cond (Sequence[float]): Conditioning values divided by scale.
        scale (float): The factor v the paths are multiplied back by.
        weights (NetWeights): Trained weights.
        horizon (int): Months to forecast.
        mc_samples (int): Number of sampled paths.
        rng (np.random.Generator, optional): Source of the Gaussian draws.

    Returns:
        ForecastPaths: Unscaled paths clamped at zero, and their mean.

    """
    rng = rng if rng is not None else np.random.default_rng(0)
    h, c, prev = _condition(np.asarray(scaled_cond, dtype=np.float64), weights)
    h = np.repeat(h, mc_samples, axis=0)
    c = None if c is None else np.repeat(c, mc_samples, axis=0)
    x = np.full((mc_samples, 1), prev)

    paths = np.empty((mc_samples, horizon))
    for t in range(horizon):
        h, c, _ = cell_forward(weights, x, h, c)
        mu, _, sigma = heads(weights, h)
        draw = mu + sigma * rng.standard_normal(mc_samples)
        paths[:, t] = draw
        x = draw[:, None]
    if not np.isfinite(paths).all():
        raise TrainingDivergedError("Forecast paths are not finite")

    paths = np.maximum(paths * scale, 0.0)
    return ForecastPaths(paths=paths, point=paths.mean(axis=0), scale=float(scale))


def _conditioning(
    history: Sequence[float], context_len: int
) -> Tuple[np.ndarray, float]:
    history = np.asarray(history, dtype=np.float64)
    if len(history) < context_len:
        raise ValueError(
            f"History of {len(history)} months is shorter than the {context_len}-month "
            "conditioning range"
        )
    cond = history[-context_len:]
    scale = 1.0 + float(cond.mean())
    return cond / scale, scale


def forecast(
    history: Sequence[float],
    weights: NetWeights,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
) -> ForecastPaths:
    """Monte-Carlo forecast from the last context_len months of a history.

    Args:
        history (Sequence[float]): Observed counts, at least config.context_len.
        weights (NetWeights): Trained weights.
        config (ModelConfig): Supplies context_len, horizon and mc_samples.
        rng (np.random.Generator, optional): Defaults to one seeded with config.seed.

    Returns:
        ForecastPaths: mc_samples x horizon unscaled paths and the point forecast.

    Raises:
        ValueError: If the history is shorter than the conditioning range.

    """
    scaled, scale = _conditioning(history, config.context_len)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return forecast_scaled(
        scaled, scale, weights, config.horizon, config.mc_samples, rng
    )


def mean_unroll(
    history: Sequence[float], weights: NetWeights, config: ModelConfig
) -> np.ndarray:
    """Deterministic forecast that feeds back each step's mean instead of a sample."""
    scaled, scale = _conditioning(history, config.context_len)
    h, c, prev = _condition(scaled, weights)
    out = np.empty(config.horizon)
    for t in range(config.horizon):
        h, c, _ = cell_forward(weights, np.array([[prev]]), h, c)
        mu, _, _ = heads(weights, h)
        prev = float(mu[0])
        out[t] = prev
    return np.maximum(out * scale, 0.0)


def model_grid(
    cells: Sequence[CellType] = CELL_ORDER,
    hidden_sizes: Sequence[int] = (16, 32, 64),
    base: Optional[ModelConfig] = None,
) -> List[ModelConfig]:
    """Every (cell, hidden_size) combination on top of a base configuration."""
    base = base if base is not None else ModelConfig()
    return [
        replace(base, cell=CellType(cell), hidden_size=int(size))
        for cell, size in itertools.product(cells, hidden_sizes)
    ]


def validation_score(
    weights: NetWeights, config: ModelConfig, windows: Sequence[ForecastWindow]
) -> float:
    """Mean MAPE of the point forecasts over the windows with a defined MAPE."""
    scores = []
    for window in windows:
        paths = forecast(window.history, weights, config)
        value = mape(window.actuals[: config.horizon], paths.point)
        if value is not None:
            scores.append(value)
    return float(np.mean(scores)) if scores else float("inf")


def _selection_key(config: ModelConfig, score: float):
    return (score, config.hidden_size, CELL_ORDER.index(config.cell))


@timer_func
def select_model(
    configs: Sequence[ModelConfig],
    train_samples: Sequence[TrainSample],
    validation_windows: Sequence[ForecastWindow],
) -> SelectionResult:
    """Trains every configuration and keeps the best on the validation windows.

    Ties in validation MAPE go to the smaller hidden size, then to the vanilla
    cell. A configuration whose training fails is skipped and reported.

    Raises:
        ValueError: If there is no configuration or validation window.
        ModelSelectionError: If every configuration fails.

    """
    if not configs:
        raise ValueError("Empty hyperparameter grid")
    if not validation_windows:
        raise ValueError("Model selection needs at least one validation window")

    scores: Dict[str, float] = {}
    failures: Dict[str, str] = {}
    best = None
    for config in configs:
        try:
            result = train(train_samples, config)
            score = validation_score(result.weights, config, validation_windows)
        except TrainingDivergedError as e:
            logger.warning(f"Skipping {config.label}: {e}")
            failures[config.label] = str(e)
            continue
        scores[config.label] = score
        logger.info(f"{config.label}: validation MAPE {score:.2f}")
        if best is None or _selection_key(config, score) < _selection_key(
            best[0].config, best[1]
        ):
            best = (result, score)

    if best is None:
        raise ModelSelectionError(f"All {len(configs)} configurations failed")
    result = best[0]
    logger.info(f"Selected {result.config.label}")
    return SelectionResult(
        config=result.config,
        weights=result.weights,
        losses=result.losses,
        scores=scores,
        failures=failures,
    )


def save_weights(weights: NetWeights, config: ModelConfig, path) -> Path:
    """Writes the weights as JSON behind a config header."""
    if weights.cell != config.cell or weights.hidden_size != config.hidden_size:
        raise ValueError("Weights do not match the configuration")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": config.to_dict(),
        "weights": {
            name: {
                "shape": list(weights.params[name].shape),
                "values": weights.params[name].reshape(-1).tolist(),
            }
            for name in PARAM_NAMES
        },
    }
    path.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    return path


def load_weights(path) -> Tuple[NetWeights, ModelConfig]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    config = ModelConfig.from_dict(payload["config"])
    params = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["weights"].items()
    }
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise ValueError(f"Weights file lacks {sorted(missing)}")
    return NetWeights(config.cell, params), config


def write_loss_curve(losses: Sequence[float], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame({"epoch": np.arange(1, len(losses) + 1), "loss": list(losses)})
    df.to_csv(
        path, index=False, encoding="utf-8", lineterminator="\n", float_format="%.10g"
    )
    return path
