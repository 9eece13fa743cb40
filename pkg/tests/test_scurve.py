#!/usr/bin/env python

"""Tests for `techcast.scurve`."""

import time

import numpy as np
import pytest

from techcast import arima
from techcast.scurve import (
    FitFailedError,
    FitResult,
    GridCell,
    SCurveParams,
    default_grid,
    fit,
    fit_cell,
    forecast,
    logistic,
)
from techcast.synth import gen_logistic

# flat, low-level history with a short uptick in its last months
FLAT_THEN_UPTICK = np.array(
    [1, 1, 2, 1, 1, 1, 2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1, 2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1]
    + [1, 2, 1, 2, 2, 3, 4, 5],
    dtype=float,
)


def params_fit(fit_result):
    p = fit_result.params
    return np.array([p.L, p.k, p.t0])


@pytest.mark.parametrize(
    "t,expected",
    [(10.0, 50.0), (0.0, 100.0 / (1.0 + np.exp(5.0))), (1e6, 100.0)],
)
def test_logistic(t, expected):
    value = logistic(t, SCurveParams(100.0, 0.5, 10.0))
    assert value == pytest.approx(expected, rel=1e-12)


def test_logistic_monotone_and_bounded():
    params = SCurveParams(100.0, 0.5, 10.0)
    y = logistic(np.linspace(-20, 40, 200), params)
    assert (np.diff(y) > 0).all()
    assert ((y > 0) & (y < 100)).all()


@pytest.mark.parametrize(
    "values", [(0.0, 0.1, 1.0), (1.0, 0.0, 1.0), (1.0, 0.1, np.inf)]
)
def test_scurve_params_invalid(values):
    with pytest.raises(ValueError):
        SCurveParams(*values)


def test_default_grid():
    history = np.arange(1, 41, dtype=float)
    grid = default_grid(history)
    assert len(grid) == 64
    assert [c.index for c in grid] == list(range(64))
    cell = grid[0]
    assert cell.lower == pytest.approx((40e-6, 1e-4, -40.0))
    assert cell.upper == pytest.approx((400.0, 2.0, 120.0))
    assert cell.init == pytest.approx((40.0, 0.01, 10.0))
    assert grid[-1].init == pytest.approx((320.0, 0.5, 60.0))


def test_fit_recovers_noiseless_logistic():
    """Noiseless logistic counts give back each parameter within 1%."""
    series = gen_logistic(500, 0.1, 60, 120, noise_sigma=0)
    start = time.time()
    result = fit(series.values)
    assert time.time() - start < 5
    np.testing.assert_allclose(params_fit(result), [500, 0.1, 60], rtol=0.01)


def test_fit_recovers_noisy_logistic():
    series = gen_logistic(500, 0.1, 60, 120, noise_sigma=5, seed=3)
    result = fit(series.values)
    np.testing.assert_allclose(params_fit(result), [500, 0.1, 60], rtol=0.10)


def test_fit_constant_history():
    """A constant series is matched by a curve already saturated in the window."""
    history = np.full(40, 5.0)
    result = fit(history)
    assert result.sse < len(history) * 0.01
    np.testing.assert_allclose(forecast(result, len(history)), 5.0, rtol=0.05)


def test_fit_too_short():
    with pytest.raises(ValueError):
        fit([1, 2, 3, 4])


def test_fit_grid_optimality():
    series = gen_logistic(200, 0.15, 30, 60, noise_sigma=3, seed=1)
    result = fit(series.values)
    assert len(result.cells) == 64
    for cell in result.cells:
        if cell.converged:
            assert result.sse <= cell.sse
    winners = [c for c in result.cells if c.converged and c.sse == result.sse]
    assert result.grid_cell.index == min(c.cell.index for c in winners)


def test_fit_deterministic():
    series = gen_logistic(300, 0.2, 20, 50, noise_sigma=4, seed=9)
    a, b = fit(series.values), fit(series.values)
    assert a.params == b.params
    assert a.sse == b.sse


def test_fit_cell_never_increases_sse():
    """Every accepted damped step keeps or lowers the SSE."""
    series = gen_logistic(400, 0.08, 45, 80, noise_sigma=6, seed=2)
    y = series.values.astype(float)
    t = np.arange(len(y), dtype=float)
    for cell in default_grid(y)[::7]:
        trace = []
        fit_cell(t, y, cell, sse_trace=trace)
        assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_fit_cell_stays_in_bounds():
    y = FLAT_THEN_UPTICK
    t = np.arange(len(y), dtype=float)
    for cell in default_grid(y):
        res = fit_cell(t, y, cell)
        if res.params is not None:
            p = res.params.as_array()
            assert (p >= np.array(cell.lower) - 1e-12).all()
            assert (p <= np.array(cell.upper) + 1e-12).all()


def test_fit_failed():
    """A grid whose only cell cannot converge within one iteration fails the fit."""
    y = gen_logistic(500, 0.1, 60, 120).values.astype(float)
    cell = GridCell(0, (50.0, 0.01, 10.0), (1e-3, 1e-4, -120.0), (5000.0, 2.0, 360.0))
    with pytest.raises(FitFailedError, match="fit failed"):
        fit(y, grid=[cell], max_iter=1)


def make_fit(L, k, t0):
    params = SCurveParams(L, k, t0)
    cell = GridCell(0, (L, k, t0), (0.0, 0.0, -1e9), (1e9, 10.0, 1e9))
    return FitResult(params=params, sse=0.0, grid_cell=cell, converged=True)


def test_forecast_saturated():
    out = forecast(make_fit(100.0, 0.5, -50.0), history_len=40)
    assert len(out) == 36
    np.testing.assert_allclose(out, 100.0, rtol=1e-6)

    fully = forecast(make_fit(100.0, 2.0, -40.0), history_len=40)
    assert (fully > 0).all() and (fully <= 100.0).all()
    assert fully[-1] == 100.0


def test_forecast_growth_spurt_midpoint():
    """An inflection 10 months after the history is crossed at forecast step 10."""
    out = forecast(make_fit(100.0, 0.3, 50.0), history_len=40)
    assert out[10] == pytest.approx(50.0)
    assert (out > 0).all() and (out <= 100.0).all()
    assert (np.diff(out) > 0).all()


def test_forecast_requires_convergence():
    res = make_fit(100.0, 0.3, 50.0)
    failed = FitResult(res.params, res.sse, res.grid_cell, converged=False)
    with pytest.raises(ValueError):
        forecast(failed, 40)


def test_false_growth_spurt():
    """On a flat window with a late uptick some grid fit explodes, ARIMA does not."""
    history = FLAT_THEN_UPTICK
    last = history[-1]
    result = fit(history)
    spurts = [
        forecast(
            FitResult(c.params, c.sse, c.cell, True), len(history)
        ).max()
        for c in result.cells
        if c.converged and c.params is not None
    ]
    assert max(spurts) > 5 * last

    params, state = arima.estimate(history, seed=0)
    assert arima.forecast(params, state, last).max() < 2 * last
