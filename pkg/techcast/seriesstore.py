from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import MonthlySeries
from .utils import fingerprint

HORIZON = 36
CONTEXT_LEN = 36
WINDOW_LEN = CONTEXT_LEN + HORIZON
MIN_SERIES_LENGTH = 3 * HORIZON
SPLIT_NAMES = ("train", "validation", "test")


class SeriesTooShortError(ValueError):
    """Raised when a series cannot hold both evaluation windows."""


class SplitError(ValueError):
    """Raised when categories cannot be split into train/validation/test."""


class WindowKind(str, Enum):
    EMERGING = "Emerging"
    ESTABLISHED = "Established"


@dataclass(frozen=True, eq=False)
class ForecastWindow:
    """An evaluation unit: a series prefix as history plus the next 36 actuals."""

    category_id: str
    kind: WindowKind
    history: np.ndarray
    actuals: np.ndarray
    series_length: int

    @property
    def fingerprint(self) -> str:
        return window_fingerprint(self)

    @property
    def last_observed(self) -> int:
        return int(self.history[-1])

    def __repr__(self) -> str:
        return (
            f"ForecastWindow({self.category_id!r}, {self.kind.value}, "
            f"history={len(self.history)}, actuals={len(self.actuals)})"
        )


def window_fingerprint(window: ForecastWindow) -> str:
    """Stable identity of a window, used to check every method saw the same data."""
    return fingerprint(
        window.category_id, window.kind.value, window.history, window.actuals
    )


def make_windows(
    series: MonthlySeries, horizon: int = HORIZON
) -> Tuple[ForecastWindow, ForecastWindow]:
    """Cuts the emerging and the established evaluation window out of a series.

    The emerging window's history is the first floor(n/3) months, the established
    window's history the first floor(2n/3) months; both are followed by `horizon`
    months of actuals.

    Args:
        series (MonthlySeries): Series of length n >= 3 * horizon.
        horizon (int): Number of held-out months.

    Returns:
        Tuple[ForecastWindow, ForecastWindow]: (emerging, established).

    Raises:
        SeriesTooShortError: If the established window would overrun the series.

    """
    n = len(series)
    if n < 3 * horizon:
        raise SeriesTooShortError(
            f"Series {series.category_id} has {n} months, needs {3 * horizon}"
        )
    values = series.values
    windows = []
    for kind, cut in (
        (WindowKind.EMERGING, n // 3),
        (WindowKind.ESTABLISHED, (2 * n) // 3),
    ):
        windows.append(
            ForecastWindow(
                category_id=series.category_id,
                kind=kind,
                history=values[:cut].copy(),
                actuals=values[cut : cut + horizon].copy(),
                series_length=n,
            )
        )
    return windows[0], windows[1]


def make_all_windows(
    series: Iterable[MonthlySeries], horizon: int = HORIZON
) -> List[ForecastWindow]:
    """Windows of every series long enough, in series order."""
    windows = []
    for s in series:
        try:
            windows.extend(make_windows(s, horizon))
        except SeriesTooShortError as e:
            logger.warning(f"Skipping {s.category_id}: {e}")
    return windows


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5 + 1e-9))


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/validation/test category sets."""

    train: Tuple[str, ...]
    validation: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def split_of(self, category_id: str) -> str:
        for name in SPLIT_NAMES:
            if category_id in getattr(self, name):
                return name
        raise KeyError(category_id)

    @property
    def categories(self) -> Tuple[str, ...]:
        return tuple(sorted(self.train + self.validation + self.test))

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SplitAssignment:
        split = cls(
            train=tuple(data["train"]),
            validation=tuple(data["validation"]),
            test=tuple(data["test"]),
            seed=int(data["seed"]),
        )
        sets = [set(split.train), set(split.validation), set(split.test)]
        if sum(len(s) for s in sets) != len(set().union(*sets)):
            raise SplitError("Split sets overlap")
        return split


def split_categories(
    categories: Iterable[str],
    seed: int,
    val_fraction: float = 0.10,
    test_fraction: float = 0.10,
) -> SplitAssignment:
    """Randomly assigns whole categories to the train, validation and test sets.

    Args:
        categories (Iterable[str]): At least 10 distinct categories.
        seed (int): Seed of the permutation; the same seed gives the same split.
        val_fraction (float): Share of validation categories, rounded half up.
        test_fraction (float): Share of test categories, rounded half up.

    Returns:
        SplitAssignment: The assignment, each set sorted.

    Raises:
        SplitError: If there are fewer than 10 categories.

    """
    ordered = sorted(set(categories))
    n = len(ordered)
    if n < 10:
        raise SplitError(f"Need at least 10 categories to split, got {n}")
    n_val = round_half_up(val_fraction * n)
    n_test = round_half_up(test_fraction * n)
    if n_val + n_test >= n:
        raise SplitError(f"No training category left out of {n}")

    rng = np.random.default_rng(seed)
    permuted = [ordered[i] for i in rng.permutation(n)]
    validation = tuple(sorted(permuted[:n_val]))
    test = tuple(sorted(permuted[n_val : n_val + n_test]))
    train = tuple(sorted(permuted[n_val + n_test :]))
    return SplitAssignment(train=train, validation=validation, test=test, seed=seed)


def save_split(split: SplitAssignment, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def load_split(path) -> SplitAssignment:
    return SplitAssignment.from_dict(json.loads(Path(path).read_text("utf-8")))


def scale(
    values: np.ndarray, context_len: int = CONTEXT_LEN
) -> Tuple[np.ndarray, float]:
    """Mean-scales values by v = 1 + mean of the first context_len values.

    Returns:
        Tuple[np.ndarray, float]: (values / v, v).

    """
    values = np.asarray(values, dtype=np.float64)
    v = 1.0 + float(values[:context_len].mean())
    return values / v, v


def unscale(values: np.ndarray, scale: float) -> np.ndarray:
    """Inverse of scale: multiplies back by v."""
    return np.asarray(values, dtype=np.float64) * scale


@dataclass(frozen=True, eq=False)
class TrainSample:
    """A fixed-length training window split into conditioning and prediction range."""

    category_id: str
    raw_values: np.ndarray
    scaled_values: np.ndarray
    scale: float
    split_index: int = CONTEXT_LEN

    def __len__(self) -> int:
        return len(self.raw_values)


def augment(
    series: MonthlySeries,
    window_len: int = WINDOW_LEN,
    stride: int = 1,
    context_len: int = CONTEXT_LEN,
) -> List[TrainSample]:
    """Slides a fixed-length window over a series, one sample per start offset.

    A series shorter than window_len yields no sample.

    """
    if len(series) < window_len:
        return []
    raw = sliding_window_view(series.values, window_len)[::stride]
    samples = []
    for row in raw:
        scaled, v = scale(row, context_len)
        samples.append(
            TrainSample(
                category_id=series.category_id,
                raw_values=row.copy(),
                scaled_values=scaled,
                scale=v,
                split_index=context_len,
            )
        )
    return samples


def augment_all(
    series: Iterable[MonthlySeries],
    window_len: int = WINDOW_LEN,
    stride: int = 1,
    context_len: int = CONTEXT_LEN,
) -> List[TrainSample]:
    samples = []
    for s in series:
        samples.extend(augment(s, window_len, stride, context_len))
    return samples


def select(
    series: Iterable[MonthlySeries], categories: Sequence[str]
) -> List[MonthlySeries]:
    wanted = set(categories)
    return [s for s in series if s.category_id in wanted]


def upload_totals(series: Iterable[MonthlySeries]) -> pd.Series:
    """Total uploads per category, largest first."""
    totals = pd.Series(
        {s.category_id: int(s.values.sum()) for s in series}, dtype="int64"
    )
    return totals.sort_values(ascending=False, kind="mergesort")


def upload_histogram(totals: pd.Series, n_bins: int = 20) -> pd.DataFrame:
    """Histogram of category totals on log-spaced bins.

    Returns:
        pd.DataFrame: Columns bin_left, bin_right and n_categories.

    """
    positive = totals[totals > 0].to_numpy(dtype=float)
    if len(positive) == 0:
        return pd.DataFrame(columns=["bin_left", "bin_right", "n_categories"])
    low, high = positive.min(), positive.max()
    if low == high:
        high = low * 10.0
    edges = np.geomspace(low, high, n_bins + 1)
    counts, edges = np.histogram(positive, bins=edges)
    return pd.DataFrame(
        {"bin_left": edges[:-1], "bin_right": edges[1:], "n_categories": counts}
    )


def split_windows(
    windows: Iterable[ForecastWindow], split: SplitAssignment
) -> Dict[str, List[ForecastWindow]]:
    """Groups windows by the split of their category."""
    grouped: Dict[str, List[ForecastWindow]] = {name: [] for name in SPLIT_NAMES}
    for window in windows:
        grouped[split.split_of(window.category_id)].append(window)
    return grouped
