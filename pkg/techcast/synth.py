"""Synthetic series with known generating parameters."""

from __future__ import annotations

import numpy as np
from statsmodels.tsa.arima_process import arma_generate_sample

from .ingest import MonthlySeries
from .scurve import SCurveParams, logistic

SYNTH_START = "2000-01"
BURNIN = 200


def _to_counts(values: np.ndarray) -> np.ndarray:
    counts = np.maximum(np.rint(values), 0).astype(np.int64)
    # a series starts at its first upload month
    counts[0] = max(counts[0], 1)
    return counts


def gen_logistic(
    L: float,
    k: float,
    t0: float,
    n: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    category_id: str = "synth.logistic",
) -> MonthlySeries:
    """Logistic counts plus Gaussian noise, rounded to non-negative integers.

    Args:
        L (float): Saturation level.
        k (float): Growth rate.
        t0 (float): Inflection month.
        n (int): Number of months.
        noise_sigma (float): Standard deviation of the additive noise.
        seed (int): Seed of the noise.
        category_id (str): Name of the generated series.

    Returns:
        MonthlySeries: The series; its first count is at least 1.

    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    params = SCurveParams(L, k, t0)
    values = logistic(np.arange(n), params)
    if noise_sigma > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sigma, n)
    return MonthlySeries(category_id, SYNTH_START, _to_counts(values))


def simulate_arma(
    phi: float, theta: float, c: float, sigma: float, n: int, seed: int = 0
) -> np.ndarray:
    """Real-valued ARIMA(1, 0, 1) stream around its stationary mean c / (1 - phi).

    The first 200 draws are discarded as burn-in.

    """
    if abs(phi) >= 1 or abs(theta) >= 1:
        raise ValueError(f"Need |phi| < 1 and |theta| < 1, got {phi}, {theta}")
    rng = np.random.default_rng(seed)
    deviations = arma_generate_sample(
        ar=[1.0, -phi],
        ma=[1.0, theta],
        nsample=n,
        scale=sigma,
        distrvs=rng.standard_normal,
        burnin=BURNIN,
    )
    return c / (1.0 - phi) + np.asarray(deviations, dtype=np.float64)


def gen_arima(
    phi: float,
    theta: float,
    c: float,
    sigma: float,
    n: int,
    seed: int = 0,
    category_id: str = "synth.arima",
) -> MonthlySeries:
    """simulate_arma rounded and clamped to non-negative integer counts."""
    values = simulate_arma(phi, theta, c, sigma, n, seed)
    return MonthlySeries(category_id, SYNTH_START, _to_counts(values))
