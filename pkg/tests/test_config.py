#!/usr/bin/env python

"""Tests for `techcast.config`."""

from pathlib import Path

import pytest
import yaml

from techcast.config import (
    SEED_ENV,
    ConfigError,
    ExperimentConfig,
    apply_env,
    config_from_dict,
    load_config,
    parse_methods,
    write_config,
)
from techcast.deepforecast import CellType

FIXTURE = Path(__file__).parent / "fixture_experiment.yaml"


def test_defaults():
    config = load_config(environ={})
    assert config == ExperimentConfig()
    assert config.min_length == 108
    assert (config.val_fraction, config.test_fraction) == (0.10, 0.10)
    assert config.methods == ("FIT", "ARIMA", "RNN")
    assert config.rnn.epochs == 750
    assert config.rnn.learning_rate == 0.001
    assert len(config.rnn.model_configs(config.seed)) == 6
    assert len(config.scurve.grid(list(range(1, 41)))) == 64


def test_load_fixture_config():
    config = load_config(FIXTURE, environ={})
    assert config.seed == 7
    assert config.series_path == "tests/fixture_series.csv"
    assert config.rnn.cells == ("LSTM",)
    assert config.rnn.hidden_sizes == (16,)
    configs = config.rnn.model_configs(config.seed)
    assert [c.label for c in configs] == ["LSTM-16"]
    assert configs[0].epochs == 50 and configs[0].seed == 7
    assert configs[0].cell is CellType.LSTM


def test_seed_from_environment():
    config = load_config(FIXTURE, environ={SEED_ENV: "42"})
    assert config.seed == 42
    assert apply_env(config, {SEED_ENV: " "}).seed == 42
    with pytest.raises(ConfigError):
        apply_env(config, {SEED_ENV: "forty-two"})


@pytest.mark.parametrize(
    "data",
    [
        {"colour": "blue"},
        {"rnn": {"layers": 2}},
        {"arima": {"bound": 1.5}},
        {"val_fraction": 0.0},
        {"test_fraction": 0.6},
        {"min_length": 50},
        {"methods": ["FIT", "PROPHET"]},
        {"rnn": {"cells": ["GRU"]}},
        {"rnn": {"hidden_sizes": []}},
        {"scurve": {"k_bounds": [2.0, 1.0]}},
        {"scurve": "dense"},
    ],
)
def test_invalid_config(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="Cannot read"):
        load_config(tmp_path / "missing.yaml", environ={})
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError, match="Invalid YAML"):
        load_config(bad, environ={})
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(scalar, environ={})


def test_parse_methods():
    assert parse_methods("fit,arima") == ("FIT", "ARIMA")
    assert parse_methods(["rnn", "FIT", "fit"]) == ("FIT", "RNN")
    assert parse_methods("") == ()
    with pytest.raises(ConfigError):
        parse_methods("fit,lstm")


def test_with_overrides():
    config = ExperimentConfig()
    changed = config.with_overrides(seed=5, methods="arima", output_dir=None)
    assert changed.seed == 5
    assert changed.methods == ("ARIMA",)
    assert changed.output_dir == config.output_dir
    with pytest.raises(ConfigError):
        config.with_overrides(n_jobs=0)


def test_write_config_round_trip(tmp_path):
    config = load_config(FIXTURE, environ={})
    path = write_config(config, tmp_path / "config.yaml")
    echoed = yaml.safe_load(path.read_text())
    assert echoed["rnn"]["epochs"] == 50
    assert echoed["arima"]["n_starts"] == 3
    assert "l_multipliers" in echoed["scurve"]
    assert load_config(path, environ={}) == config
