from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    """Raised when actuals and forecast cannot be compared."""


def _pair(actuals: Sequence[float], forecast: Sequence[float]):
    a = np.asarray(actuals, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape or a.ndim != 1:
        raise MetricError(
            "Actuals and forecast must be 1-D of equal length, "
            f"got {a.shape} and {f.shape}"
        )
    return a, f


def rmse(actuals: Sequence[float], forecast: Sequence[float]) -> float:
    """Root mean squared error, in uploads per month."""
    a, f = _pair(actuals, forecast)
    if len(a) == 0:
        raise MetricError("Cannot score an empty horizon")
    return float(np.sqrt(np.mean((a - f) ** 2)))


def mape(actuals: Sequence[float], forecast: Sequence[float]) -> Optional[float]:
    """Mean absolute percentage error over the months with a non-zero actual.

    Returns:
        Optional[float]: Percent, or None when every actual is zero.

    """
    a, f = _pair(actuals, forecast)
    nonzero = a != 0
    if not nonzero.any():
        return None
    return float(np.mean(np.abs(a[nonzero] - f[nonzero]) / a[nonzero]) * 100.0)


def naive_forecast(history: Sequence[float], horizon: int) -> np.ndarray:
    """Repeats the last observed value over the horizon."""
    history = np.asarray(history, dtype=np.float64)
    if len(history) == 0:
        raise MetricError("Naive forecast needs at least one observation")
    return np.full(horizon, history[-1])
