from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import optimize, signal

HORIZON = 36
MIN_HISTORY = 10
BOUND = 0.999


class EstimationError(RuntimeError):
    """Raised when the CSS objective cannot be minimized."""


@dataclass(frozen=True)
class ArimaParams:
    """ARIMA(1, 0, 1) with intercept: y_t = c + phi y_{t-1} + e_t + theta e_{t-1}."""

    phi: float
    theta: float
    c: float
    sigma2: float

    def __post_init__(self):
        if abs(self.phi) >= 1 or abs(self.theta) >= 1 or self.sigma2 < 0:
            raise ValueError(f"Invalid ARIMA parameters {self}")

    @property
    def mean(self) -> float:
        """Stationary mean c / (1 - phi)."""
        return self.c / (1.0 - self.phi)

    def to_record(self) -> dict:
        return {"phi": self.phi, "theta": self.theta, "c": self.c, "sigma2": self.sigma2}


@dataclass(frozen=True, eq=False)
class ArimaFitState:
    """Residuals aligned to the history and their sum of squares."""

    residuals: np.ndarray
    css: float

    @property
    def last_residual(self) -> float:
        return float(self.residuals[-1])


def residuals(
    c: float, phi: float, theta: float, history: Sequence[float]
) -> np.ndarray:
    """CSS residual recursion.

    e_1 = 0 and e_t = y_t - c - phi y_{t-1} - theta e_{t-1} for t >= 2, run as an
    IIR filter over the one-step innovations.

    """
    y = np.asarray(history, dtype=np.float64)
    eps = np.zeros_like(y)
    if len(y) > 1:
        u = y[1:] - c - phi * y[:-1]
        eps[1:] = signal.lfilter([1.0], [1.0, theta], u)
    return eps


def css(c: float, phi: float, theta: float, history: Sequence[float]) -> float:
    eps = residuals(c, phi, theta, history)
    return float(eps @ eps)


def estimate(
    history: Sequence[float],
    n_starts: int = 3,
    seed: int = 0,
    max_iter: int = 4000,
    bound: float = BOUND,
) -> Tuple[ArimaParams, ArimaFitState]:
    """Estimates ARIMA(1, 0, 1) with intercept by conditional sum of squares.

    Nelder-Mead runs from (c = mean(y) / 2, phi = 0.5, theta = 0) and from
    n_starts - 1 jittered copies of it, with phi and theta boxed to
    (-0.999, 0.999); the lowest CSS wins.

    Args:
        history (Sequence[float]): Observed values, at least 10.
        n_starts (int): Number of simplex starts.
        seed (int): Seed of the jitter.
        max_iter (int): Iteration cap per start.
        bound (float): Box on |phi| and |theta|.

    Returns:
        Tuple[ArimaParams, ArimaFitState]: Parameters with sigma2 = css / (n - 3),
        and the residuals they produce.

    Raises:
        ValueError: If the history is shorter than 10 values.
        EstimationError: If every start ends on a non-finite objective.

    """
    y = np.asarray(history, dtype=np.float64)
    n = len(y)
    if n < MIN_HISTORY:
        raise ValueError(f"Need at least {MIN_HISTORY} values to estimate, got {n}")

    def objective(x: np.ndarray) -> float:
        value = css(x[0], x[1], x[2], y)
        return value if np.isfinite(value) else np.inf

    base = np.array([0.5 * y.mean(), 0.5, 0.0])
    rng = np.random.default_rng(seed)
    spread = max(y.std(), 1.0)
    starts = [base]
    for _ in range(max(n_starts, 1) - 1):
        jitter = rng.uniform(-1.0, 1.0, size=3) * np.array([0.1 * spread, 0.3, 0.3])
        start = base + jitter
        start[1:] = np.clip(start[1:], -0.9, 0.9)
        starts.append(start)

    bounds = [(None, None), (-bound, bound), (-bound, bound)]
    best = None
    for start in starts:
        result = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10},
        )
        if not np.isfinite(result.fun):
            logger.debug(f"Simplex start {start} ended on a non-finite objective")
            continue
        if best is None or result.fun < best.fun:
            best = result

    if best is None:
        raise EstimationError("CSS objective is not finite at any start")

    c, phi, theta = (float(v) for v in best.x)
    phi = float(np.clip(phi, -bound, bound))
    theta = float(np.clip(theta, -bound, bound))
    eps = residuals(c, phi, theta, y)
    total = float(eps @ eps)
    params = ArimaParams(phi=phi, theta=theta, c=c, sigma2=total / (n - 3))
    return params, ArimaFitState(residuals=eps, css=total)


def forecast(
    params: ArimaParams,
    state: ArimaFitState,
    last_y: float,
    horizon: int = HORIZON,
) -> np.ndarray:
    """Recursive point forecast with future innovations at their zero mean.

    y_{n+1} = c + phi last_y + theta e_n, then y_{n+h} = c + phi y_{n+h-1}.

    """
    out = np.empty(horizon, dtype=np.float64)
    previous = params.c + params.phi * last_y + params.theta * state.last_residual
    out[0] = previous
    for h in range(1, horizon):
        previous = params.c + params.phi * previous
        out[h] = previous
    return out
