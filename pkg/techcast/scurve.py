from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit

HORIZON = 36
MIN_HISTORY = 8
LAMBDA_START = 1e-3
LAMBDA_MAX = 1e10


class FitFailedError(RuntimeError):
    """Raised when no grid cell converges on a window."""


@dataclass(frozen=True)
class SCurveParams:
    """Three-parameter logistic y(t) = L / (1 + exp(-k (t - t0)))."""

    L: float
    k: float
    t0: float

    def __post_init__(self):
        if not (self.L > 0 and self.k > 0 and np.isfinite(self.t0)):
            raise ValueError(f"Invalid S-curve parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.k, self.t0], dtype=np.float64)

    @classmethod
    def from_array(cls, p: np.ndarray) -> SCurveParams:
        return cls(float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class GridCell:
    """An initialization and the box bounds the fit is clamped to."""

    index: int
    init: Tuple[float, float, float]
    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]


@dataclass(frozen=True)
class CellResult:
    cell: GridCell
    params: Optional[SCurveParams]
    sse: float
    converged: bool
    n_iter: int


@dataclass(frozen=True)
class FitResult:
    """Winning grid cell of a window fit, plus every cell's outcome."""

    params: SCurveParams
    sse: float
    grid_cell: GridCell
    converged: bool
    cells: Tuple[CellResult, ...] = ()

    def to_record(self) -> dict:
        return {
            "L": self.params.L,
            "k": self.params.k,
            "t0": self.params.t0,
            "sse": self.sse,
            "converged": self.converged,
            "grid_cell": self.grid_cell.index,
        }


def logistic(t, params: SCurveParams):
    """Evaluates the S-curve at time(s) t, in months since the window start."""
    return params.L * expit(params.k * (np.asarray(t, dtype=np.float64) - params.t0))


def _curve(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p[0] * expit(p[1] * (t - p[2]))


def _jacobian(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    L, k, t0 = p
    s = expit(k * (t - t0))
    ds = s * (1.0 - s)
    return np.column_stack([s, L * ds * (t - t0), -L * k * ds])


def default_grid(
    history: Sequence[float],
    l_multipliers: Sequence[float] = (1.0, 2.0, 4.0, 8.0),
    l_upper_multiplier: float = 10.0,
    k_inits: Sequence[float] = (0.01, 0.05, 0.2, 0.5),
    k_bounds: Tuple[float, float] = (1e-4, 2.0),
    t0_fractions: Sequence[float] = (0.25, 0.5, 1.0, 1.5),
    t0_bounds: Tuple[float, float] = (-1.0, 3.0),
) -> List[GridCell]:
    """Builds the initialization/bounds grid from the window's own data.

    L starts at multiples of the history's peak and is capped at
    l_upper_multiplier times the peak; t0 starts and is bounded at multiples of the
    history length.

    Args:
        history (Sequence[float]): The observed counts.
        l_multipliers (Sequence[float]): Initial L as multiples of max(history).
        l_upper_multiplier (float): Upper bound of L as a multiple of max(history).
        k_inits (Sequence[float]): Initial growth rates.
        k_bounds (Tuple[float, float]): Bounds of k.
        t0_fractions (Sequence[float]): Initial t0 as fractions of len(history).
        t0_bounds (Tuple[float, float]): Bounds of t0 as multiples of len(history).

    Returns:
        List[GridCell]: One cell per (L, k, t0) combination, in that nesting order.

    """
    n = len(history)
    peak = float(np.max(history)) if n else 1.0
    if peak <= 0:
        peak = 1.0
    lower = (1e-6 * peak, k_bounds[0], t0_bounds[0] * n)
    upper = (l_upper_multiplier * peak, k_bounds[1], t0_bounds[1] * n)
    cells = []
    combos = itertools.product(l_multipliers, k_inits, t0_fractions)
    for index, (l_mult, k_init, t0_frac) in enumerate(combos):
        init = np.clip([l_mult * peak, k_init, t0_frac * n], lower, upper)
        cells.append(GridCell(index, tuple(float(v) for v in init), lower, upper))
    return cells


def _damping(a: np.ndarray) -> np.ndarray:
    diag = np.diag(a).copy()
    floor = 1e-12 * max(float(diag.max()), 1e-300)
    return np.diag(np.maximum(diag, floor))


def fit_cell(
    t: np.ndarray,
    y: np.ndarray,
    cell: GridCell,
    max_iter: int = 200,
    tol: float = 1e-10,
    sse_trace: Optional[List[float]] = None,
) -> CellResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) run from one grid cell.

    A trial step solves (J'J + lambda diag(J'J)) delta = J'r, is clamped to the
    cell's box and is accepted only if the SSE does not increase; lambda is divided
    by 10 on acceptance and multiplied by 10 on rejection. The run converges when
    an accepted step improves the SSE by less than tol (relative) or when no
    damping yields a non-increasing step. When given, sse_trace receives the
    starting SSE and the SSE after every accepted step.

    """
    lower = np.asarray(cell.lower)
    upper = np.asarray(cell.upper)
    p = np.asarray(cell.init, dtype=np.float64)
    r = y - _curve(t, p)
    sse = float(r @ r)
    if not np.isfinite(sse):
        return CellResult(cell, None, float("inf"), False, 0)

    if sse_trace is not None:
        sse_trace.append(sse)
    lam = LAMBDA_START
    converged = sse == 0.0
    n_iter = 0
    while not converged and n_iter < max_iter:
        n_iter += 1
        jac = _jacobian(t, p)
        a = jac.T @ jac
        g = jac.T @ r
        d = _damping(a)
        step = None
        while lam <= LAMBDA_MAX:
            try:
                delta = np.linalg.solve(a + lam * d, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = np.clip(p + delta, lower, upper)
            r_new = y - _curve(t, p_new)
            sse_new = float(r_new @ r_new)
            if np.isfinite(sse_new) and sse_new <= sse:
                step = (p_new, r_new, sse_new)
                break
            lam *= 10.0
        if step is None:
            converged = True
            break
        improvement = (sse - step[2]) / sse if sse > 0 else 0.0
        p, r, sse = step
        if sse_trace is not None:
            sse_trace.append(sse)
        lam /= 10.0
        if improvement < tol or sse == 0.0:
            converged = True

    try:
        params = SCurveParams.from_array(p)
    except ValueError:
        return CellResult(cell, None, sse, False, n_iter)
    return CellResult(cell, params, sse, converged, n_iter)


def fit(
    history: Sequence[float],
    grid: Optional[Sequence[GridCell]] = None,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> FitResult:
    """Fits the S-curve to a window's monthly counts by grid-searched least squares.

    Every grid cell runs its own damped least-squares fit; the converged cell with
    the lowest in-sample SSE wins, ties going to the lower cell index.

    Args:
        history (Sequence[float]): Observed counts, at least 8 months.
        grid (Sequence[GridCell], optional): Defaults to default_grid(history).
        max_iter (int): Iteration cap per cell.
        tol (float): Relative SSE change below which a cell has converged.

    Returns:
        FitResult: The winning fit; `cells` keeps every cell's outcome.

    Raises:
        ValueError: If the history is shorter than 8 months.
        FitFailedError: If no cell converges.

    """
    y = np.asarray(history, dtype=np.float64)
    if len(y) < MIN_HISTORY:
        raise ValueError(f"Need at least {MIN_HISTORY} months to fit, got {len(y)}")
    t = np.arange(len(y), dtype=np.float64)
    grid = list(grid) if grid is not None else default_grid(y)

    results = tuple(fit_cell(t, y, cell, max_iter=max_iter, tol=tol) for cell in grid)
    candidates = [res for res in results if res.converged and res.params is not None]
    if not candidates:
        raise FitFailedError("fit failed")
    best = min(candidates, key=lambda res: (res.sse, res.cell.index))
    logger.debug(
        f"S-curve fit: cell {best.cell.index} sse={best.sse:.4g} "
        f"({len(candidates)}/{len(results)} cells converged)"
    )
    return FitResult(
        params=best.params,
        sse=best.sse,
        grid_cell=best.cell,
        converged=True,
        cells=results,
    )


def forecast(
    fit_result: FitResult, history_len: int, horizon: int = HORIZON
) -> np.ndarray:
    """Extrapolates the fitted S-curve over the months after the history.

    Values lie in (0, L]: once k * (t - t0) saturates float64 the curve returns L
    exactly.

    Returns:
        np.ndarray: logistic(history_len), ..., logistic(history_len + horizon - 1).

    """
    if not fit_result.converged:
        raise ValueError("Cannot forecast from a fit that did not converge")
    t = np.arange(history_len, history_len + horizon, dtype=np.float64)
    return logistic(t, fit_result.params)
