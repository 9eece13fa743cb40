#!/usr/bin/env python

"""Tests for `techcast.deepforecast` and its gradient core."""

import numpy as np
import pandas as pd
import pytest

from techcast import deepforecast
from techcast.deepforecast import (
    CellType,
    ModelConfig,
    ModelSelectionError,
    NetState,
    StepDistribution,
    TrainingDivergedError,
    TrainResult,
    forecast,
    forecast_scaled,
    gradient_check,
    init_weights,
    load_weights,
    mean_unroll,
    model_grid,
    nll,
    save_weights,
    select_model,
    step,
    train,
    write_loss_curve,
    zero_weights,
)
from techcast.ingest import MonthlySeries
from techcast.metrics import mape, naive_forecast
from techcast.recurrent import sequence_loss_and_grads
from techcast.seriesstore import (
    ForecastWindow,
    WindowKind,
    augment,
    augment_all,
    make_windows,
)
from techcast.synth import gen_logistic

SMALL = ModelConfig(hidden_size=8, batch_size=16, epochs=5, learning_rate=0.01, seed=3)


def logistic_samples(n_series=2, n=100):
    series = [
        gen_logistic(200 + 50 * i, 0.1, 40 + 5 * i, n, noise_sigma=3, seed=i)
        for i in range(n_series)
    ]
    return augment_all(series)


@pytest.mark.parametrize("cell", list(CellType))
def test_zero_weights_step(cell):
    weights = zero_weights(cell, 4)
    dist, state = step(0.7, NetState.zeros(weights), weights)
    assert dist.mu == 0.0
    assert dist.sigma == pytest.approx(np.log(2.0) + 1e-6, abs=1e-12)
    assert state.is_finite()
    assert (state.memory is None) == (cell == CellType.VANILLA)


def test_step_errors():
    weights = zero_weights(CellType.LSTM, 4)
    with pytest.raises(ValueError):
        step(float("nan"), NetState.zeros(weights), weights)
    weights.params["W_h"][0, 0] = np.inf
    with pytest.raises(TrainingDivergedError):
        step(1.0, NetState.zeros(weights), weights)


@pytest.mark.parametrize(
    "mu,sigma,observed,expected",
    [(0.0, 1.0, 0.0, 0.9189385), (1.0, 0.5, 2.0, 2.2257913)],
)
def test_nll(mu, sigma, observed, expected):
    value = nll(StepDistribution(mu, sigma), observed)
    assert value == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("k", range(10))
def test_gradient_check(k):
    """Backpropagation matches central differences for both cells and several sizes."""
    rng = np.random.default_rng(100 + k)
    cell = list(CellType)[k % 2]
    hidden = int(rng.integers(8, 33))
    weights = init_weights(cell, hidden, rng)
    sample = rng.uniform(0.0, 2.0, size=30)
    error = gradient_check(weights, sample, n_checks=50, seed=k, context_len=15)
    assert error < 1e-4


def test_gradient_check_on_train_sample():
    sample = augment(gen_logistic(300, 0.1, 40, 80, noise_sigma=2))[0]
    weights = init_weights(CellType.VANILLA, 8, np.random.default_rng(0))
    assert gradient_check(weights, sample) < 1e-4


@pytest.mark.parametrize("cell", list(CellType))
def test_zero_input_gradient_vanishes(cell):
    """With an all-zero sample every input is zero, so W_x receives no gradient."""
    weights = init_weights(cell, 8, np.random.default_rng(1))
    _, grads = sequence_loss_and_grads(weights, np.zeros((1, 20)), 10)
    np.testing.assert_array_equal(grads["W_x"], 0.0)
    assert np.abs(grads["b_mu"]).sum() > 0


def test_train_deterministic_and_loss_decreases():
    samples = logistic_samples()
    config = ModelConfig(
        hidden_size=8, batch_size=16, epochs=20, learning_rate=0.01, seed=1
    )
    a = train(samples, config)
    b = train(samples, config)
    assert a.losses == b.losses
    for name, value in a.weights.params.items():
        np.testing.assert_array_equal(value, b.weights.params[name])
    assert len(a.losses) == 20
    assert a.losses[-1] < a.losses[0]


def test_train_constant_sample():
    """A constant series is learned: the loss falls steadily and forecasts stay level."""
    series = MonthlySeries("const", "2000-01", np.full(72, 10))
    config = ModelConfig(
        hidden_size=8,
        batch_size=1,
        epochs=600,
        learning_rate=0.01,
        seed=0,
        mc_samples=200,
    )
    result = train(augment(series), config)
    assert all(b < a for a, b in zip(result.losses[:10], result.losses[1:10]))
    paths = forecast(np.full(36, 10.0), result.weights, config)
    np.testing.assert_allclose(paths.point, 10.0, rtol=0.1)


def test_train_errors():
    with pytest.raises(ValueError):
        train([], SMALL)
    with pytest.raises(ValueError):
        train(logistic_samples(), ModelConfig(context_len=10, horizon=10))


def test_forecast_shape_and_non_negative():
    weights = init_weights(CellType.LSTM, 8, np.random.default_rng(0))
    config = ModelConfig(hidden_size=8)
    history = gen_logistic(50, 0.2, 10, 40).values
    paths = forecast(history, weights, config, np.random.default_rng(5))
    assert paths.paths.shape == (100, 36)
    assert paths.point.shape == (36,)
    assert (paths.paths >= 0).all()
    np.testing.assert_allclose(paths.point, paths.paths.mean(axis=0))
    assert paths.scale == pytest.approx(1 + history[-36:].mean())


def test_forecast_reproducible():
    weights = init_weights(CellType.VANILLA, 8, np.random.default_rng(0))
    config = ModelConfig(cell=CellType.VANILLA, hidden_size=8, seed=4)
    history = np.arange(1, 50, dtype=float)
    a = forecast(history, weights, config)
    b = forecast(history, weights, config)
    np.testing.assert_array_equal(a.paths, b.paths)


@pytest.mark.parametrize("cell", list(CellType))
def test_zero_variance_paths_follow_mean_unroll(cell):
    weights = init_weights(cell, 8, np.random.default_rng(2))
    weights.params["w_sigma"][:] = 0.0
    weights.params["b_sigma"][:] = -60.0
    config = ModelConfig(cell=cell, hidden_size=8, mc_samples=10)
    history = np.linspace(5, 40, 48)
    paths = forecast(history, weights, config)
    unrolled = mean_unroll(history, weights, config)
    expected = np.tile(unrolled, (10, 1))
    np.testing.assert_allclose(paths.paths, expected, rtol=1e-4, atol=1e-3)


def test_forecast_scaled_equivariance():
    """Identical scaled inputs and a doubled scale double the paths exactly."""
    weights = init_weights(CellType.LSTM, 8, np.random.default_rng(3))
    cond = np.linspace(0.2, 1.4, 36)
    a = forecast_scaled(cond, 7.5, weights, rng=np.random.default_rng(9))
    b = forecast_scaled(cond, 15.0, weights, rng=np.random.default_rng(9))
    np.testing.assert_allclose(b.paths, 2.0 * a.paths, rtol=1e-12)
    np.testing.assert_allclose(b.point, 2.0 * a.point, rtol=1e-12)


def test_forecast_history_too_short():
    weights = zero_weights(CellType.LSTM, 4)
    with pytest.raises(ValueError, match="shorter"):
        forecast(np.ones(35), weights, ModelConfig(hidden_size=4))


def test_model_config():
    config = ModelConfig(cell="VanillaRNN", hidden_size=16)
    assert config.cell is CellType.VANILLA
    assert config.label == "VanillaRNN-16"
    assert config.window_len == 72
    assert ModelConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError):
        ModelConfig(hidden_size=0)
    with pytest.raises(ValueError):
        ModelConfig(learning_rate=0.0)


def test_model_grid():
    grid = model_grid(hidden_sizes=(16, 32, 64))
    assert len(grid) == 6
    assert {c.label for c in grid} == {
        f"{cell.value}-{size}" for cell in CellType for size in (16, 32, 64)
    }


def validation_windows():
    return list(make_windows(gen_logistic(300, 0.08, 50, 120, noise_sigma=2, seed=7)))


def test_select_model_tie_break(monkeypatch):
    """Equal validation scores go to the smaller network, then to the vanilla cell."""
    calls = []

    def fake_train(samples, config):
        calls.append(config.label)
        return TrainResult(zero_weights(config.cell, config.hidden_size), [1.0], config)

    monkeypatch.setattr(deepforecast, "train", fake_train)
    monkeypatch.setattr(deepforecast, "validation_score", lambda *args: 5.0)
    grid = model_grid(
        cells=(CellType.LSTM, CellType.VANILLA), hidden_sizes=(64, 16, 32), base=SMALL
    )
    result = select_model(grid, logistic_samples(1), validation_windows())
    assert len(calls) == 6
    assert result.config.label == "VanillaRNN-16"
    assert len(result.scores) == 6


def test_select_model_skips_failures(monkeypatch):
    def flaky_train(samples, config):
        if config.cell == CellType.VANILLA:
            raise TrainingDivergedError("non-finite loss at epoch 3")
        return TrainResult(zero_weights(config.cell, config.hidden_size), [1.0], config)

    monkeypatch.setattr(deepforecast, "train", flaky_train)
    grid = model_grid(hidden_sizes=(4,), base=SMALL)
    result = select_model(grid, logistic_samples(1), validation_windows())
    assert result.config.cell == CellType.LSTM
    assert result.failures == {"VanillaRNN-4": "non-finite loss at epoch 3"}

    def failing_train(samples, config):
        raise TrainingDivergedError("non-finite loss at epoch 1")

    monkeypatch.setattr(deepforecast, "train", failing_train)
    with pytest.raises(ModelSelectionError):
        select_model(grid, logistic_samples(1), validation_windows())


def test_select_model_errors():
    with pytest.raises(ValueError):
        select_model([], logistic_samples(1), validation_windows())
    with pytest.raises(ValueError):
        select_model([SMALL], logistic_samples(1), [])


def test_select_model_picks_lowest_score():
    grid = model_grid(hidden_sizes=(4, 8), base=SMALL)
    result = select_model(grid, logistic_samples(), validation_windows())
    assert len(result.scores) == 4
    assert result.scores[result.config.label] == min(result.scores.values())


def test_weights_round_trip(tmp_path):
    weights = init_weights(CellType.LSTM, 8, np.random.default_rng(0))
    config = ModelConfig(hidden_size=8)
    path = save_weights(weights, config, tmp_path / "weights.json")
    loaded, loaded_config = load_weights(path)
    assert loaded_config == config
    assert loaded.cell == CellType.LSTM
    for name, value in weights.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)
    with pytest.raises(ValueError):
        save_weights(weights, ModelConfig(hidden_size=16), tmp_path / "bad.json")


def test_write_loss_curve(tmp_path):
    path = write_loss_curve([2.5, 1.25, 1.0], tmp_path / "loss.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == ["epoch", "loss"]
    assert df["epoch"].tolist() == [1, 2, 3]
    assert df["loss"].tolist() == [2.5, 1.25, 1.0]


@pytest.mark.slow
def test_rnn_beats_naive_forecast():
    """A hidden-32 LSTM trained on logistic series forecasts growth better than naive."""
    rng = np.random.default_rng(0)
    series = []
    for i in range(55):
        L = rng.uniform(100, 1000)
        series.append(
            gen_logistic(
                L,
                rng.uniform(0.06, 0.12),
                rng.uniform(45, 70),
                96,
                noise_sigma=0.02 * L,
                seed=i,
                category_id=f"synth{i:02d}",
            )
        )
    train_series, held_out = series[:50], series[50:]
    config = ModelConfig(hidden_size=32, epochs=100, seed=0)
    result = train(augment_all(train_series), config)

    rnn_scores, naive_scores = [], []
    for s in held_out:
        window = ForecastWindow(
            s.category_id, WindowKind.EMERGING, s.values[:60], s.values[60:96], len(s)
        )
        point = forecast(window.history, result.weights, config).point
        rnn_scores.append(mape(window.actuals, point))
        naive_scores.append(mape(window.actuals, naive_forecast(window.history, 36)))
    assert np.mean(rnn_scores) < np.mean(naive_scores)
