"""Benchmark harness: per-window forecasts, metric rows and report tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger

from . import arima, scurve
from .config import METHODS, ArimaOptions, ScurveOptions
from .deepforecast import ModelConfig, NetWeights, TrainingDivergedError
from .deepforecast import forecast as rnn_forecast
from .metrics import MetricError, mape, naive_forecast, rmse
from .seriesstore import ForecastWindow, SplitAssignment, WindowKind
from .synth import gen_arima, gen_logistic
from .utils import (
    follow_log_level,
    log_level,
    nonparametric_skew,
    progress,
    timer_func,
)

__all__ = [
    "MetricError",
    "MetricRow",
    "WindowFailure",
    "BenchmarkResult",
    "ReportTable",
    "rmse",
    "mape",
    "naive_forecast",
    "gen_logistic",
    "gen_arima",
    "aggregate",
    "run_benchmark",
    "check_fairness",
    "emit_plotdata",
    "report_frame",
    "format_report",
    "write_rows",
    "read_rows",
    "write_failures",
    "write_fits",
]

ROW_COLUMNS = [
    "method",
    "category_id",
    "kind",
    "split",
    "window_id",
    "rmse",
    "mape",
    "n_zero_actuals",
]
KIND_ORDER = (WindowKind.EMERGING.value, WindowKind.ESTABLISHED.value, "All")
SCORE_COLUMNS = ("rmse_mean", "rmse_median", "mape_mean", "mape_median")
REPORT_COLUMNS = [
    "scope",
    "method",
    "kind",
    "n_windows",
    "n_mape_excluded",
    "n_zero_months",
    "rmse_mean",
    "rmse_median",
    "mape_mean",
    "mape_median",
    "mape_skew",
]
PLOT_COLUMNS = ["month_index", "actual", "fit", "arima", "rnn"]


@dataclass(frozen=True)
class MetricRow:
    """Scores of one method on one window."""

    method: str
    category_id: str
    kind: str
    rmse: float
    mape: Optional[float]
    window_id: str = ""
    split: str = ""
    n_zero_actuals: int = 0

    def __post_init__(self):
        if self.rmse < 0 or (self.mape is not None and self.mape < 0):
            raise MetricError(f"Negative score in {self}")


@dataclass(frozen=True)
class WindowFailure:
    """A window a method could not forecast, and why."""

    method: str
    category_id: str
    kind: str
    reason: str
    window_id: str = ""


@dataclass
class BenchmarkResult:
    rows: List[MetricRow] = field(default_factory=list)
    failures: List[WindowFailure] = field(default_factory=list)
    forecasts: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    fits: List[dict] = field(default_factory=list)


@dataclass
class ReportTable:
    """Mean/median scores per group; `frame` holds one row per group."""

    frame: pd.DataFrame
    group_by: Tuple[str, ...]

    @property
    def n_windows(self) -> int:
        return int(self.frame["n_windows"].sum())


def score_window(
    method: str, window: ForecastWindow, forecast, split: str = ""
) -> MetricRow:
    actuals = window.actuals
    forecast = np.asarray(forecast, dtype=np.float64)
    return MetricRow(
        method=method,
        category_id=window.category_id,
        kind=window.kind.value,
        rmse=rmse(actuals, forecast),
        mape=mape(actuals, forecast),
        window_id=window.fingerprint,
        split=split,
        n_zero_actuals=int((actuals == 0).sum()),
    )


def _classical_forecast(
    method: str,
    window: ForecastWindow,
    scurve_options: ScurveOptions,
    arima_options: ArimaOptions,
    seed: int,
    level: Optional[str] = None,
):
    """Forecast of FIT or ARIMA on one window; returns (forecast, fit record, error)."""
    follow_log_level(level)
    history = window.history.astype(np.float64)
    horizon = len(window.actuals)
    try:
        if method == "FIT":
            result = scurve.fit(
                history,
                grid=scurve_options.grid(history),
                max_iter=scurve_options.max_iter,
                tol=scurve_options.tol,
            )
            forecast = scurve.forecast(result, len(history), horizon)
            return forecast, result.to_record(), None
        params, state = arima.estimate(
            history,
            n_starts=arima_options.n_starts,
            seed=seed,
            max_iter=arima_options.max_iter,
            bound=arima_options.bound,
        )
        return (
            arima.forecast(params, state, history[-1], horizon),
            params.to_record(),
            None,
        )
    except (scurve.FitFailedError, arima.EstimationError, ValueError) as e:
        return None, None, str(e)


def window_rng(seed: int, window: ForecastWindow) -> np.random.Generator:
    """Generator that depends on the seed and the window only, not on run order."""
    return np.random.default_rng([seed, int(window.fingerprint[:8], 16)])


@timer_func
def run_benchmark(
    windows: Sequence[ForecastWindow],
    methods: Iterable[str],
    split: Optional[SplitAssignment] = None,
    rnn: Optional[Tuple[NetWeights, ModelConfig]] = None,
    scurve_options: Optional[ScurveOptions] = None,
    arima_options: Optional[ArimaOptions] = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> BenchmarkResult:
    """Scores every requested method on the same windows.

    FIT and ARIMA run on all windows, through a joblib pool when n_jobs != 1; the
    RNN runs on the windows of test-split categories only. Failures do not stop
    the run: they come back as WindowFailure records.

    Args:
        windows (Sequence[ForecastWindow]): The evaluation windows.
        methods (Iterable[str]): Any of FIT, ARIMA and RNN.
        split (SplitAssignment, optional): Needed for the RNN and to tag rows.
        rnn (Tuple[NetWeights, ModelConfig], optional): The trained network.
        scurve_options (ScurveOptions, optional): Grid and LM settings.
        arima_options (ArimaOptions, optional): Estimation settings.
        seed (int): Seed of ARIMA restarts.
        n_jobs (int): joblib workers for the classical methods.

    Returns:
        BenchmarkResult: Rows in window order, failures, the forecasts keyed by
        window fingerprint then method, and the fitted parameters.

    Raises:
        ValueError: If the RNN is requested without a split or a trained network.

    """
    requested = {str(name).upper() for name in methods}
    methods = [m for m in METHODS if m in requested]
    if "RNN" in methods and (split is None or rnn is None):
        raise ValueError("The RNN needs a split assignment and trained weights")
    scurve_options = scurve_options or ScurveOptions()
    arima_options = arima_options or ArimaOptions()
    result = BenchmarkResult()
    if not methods or not windows:
        return result

    ids = [w.fingerprint for w in windows]
    classical = [m for m in methods if m != "RNN"]
    jobs = [(w, m) for w in windows for m in classical]
    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_classical_forecast)(
            m, w, scurve_options, arima_options, seed, log_level()
        )
        for w, m in progress(jobs, desc="Classical forecasts")
    )
    by_key = {(id(w), m): out for (w, m), out in zip(jobs, outputs)}

    for window, window_id in zip(progress(windows, desc="Scoring windows"), ids):
        tag = split.split_of(window.category_id) if split is not None else ""
        for method in methods:
            if method == "RNN":
                if tag != "test":
                    continue
                weights, config = rnn
                try:
                    forecast = rnn_forecast(
                        window.history, weights, config, window_rng(config.seed, window)
                    ).point
                    error = None
                except (ValueError, TrainingDivergedError) as e:
                    forecast, error = None, str(e)
                record = None
            else:
                forecast, record, error = by_key[(id(window), method)]

            if error is not None:
                logger.warning(
                    f"{method} failed on {window.category_id} "
                    f"{window.kind.value}: {error}"
                )
                result.failures.append(
                    WindowFailure(
                        method, window.category_id, window.kind.value, error, window_id
                    )
                )
                continue
            result.rows.append(score_window(method, window, forecast, tag))
            result.forecasts.setdefault(window_id, {})[method] = forecast
            if record is not None:
                result.fits.append(
                    {
                        "method": method,
                        "category": window.category_id,
                        "kind": window.kind.value,
                        **record,
                    }
                )

    check_fairness(result.rows)
    logger.info(
        f"Benchmark: {len(result.rows)} rows, {len(result.failures)} failures "
        f"over {len(windows)} windows"
    )
    return result


def check_fairness(rows: Iterable[MetricRow]):
    """Every method must have seen the identical window for a (category, kind).

    Raises:
        MetricError: If two rows of one window carry different fingerprints.

    """
    seen: Dict[Tuple[str, str], str] = {}
    for row in rows:
        key = (row.category_id, row.kind)
        if seen.setdefault(key, row.window_id) != row.window_id:
            raise MetricError(f"Methods saw different data for window {key}")


def rows_frame(rows: Iterable[MetricRow]) -> pd.DataFrame:
    records = [asdict(r) for r in rows]
    if not records:
        return pd.DataFrame(columns=ROW_COLUMNS)
    return pd.DataFrame.from_records(records)[ROW_COLUMNS]


def _group_stats(group: pd.DataFrame) -> dict:
    defined = group["mape"].dropna().astype(float)
    return {
        "n_windows": len(group),
        "n_mape_excluded": int(group["mape"].isna().sum()),
        "n_zero_months": int(group["n_zero_actuals"].sum()),
        "rmse_mean": float(group["rmse"].mean()),
        "rmse_median": float(group["rmse"].median()),
        "mape_mean": float(defined.mean()) if len(defined) else np.nan,
        "mape_median": float(defined.median()) if len(defined) else np.nan,
        "mape_skew": nonparametric_skew(defined.to_numpy()),
    }


def aggregate(
    rows: Iterable[MetricRow], group_by: Sequence[str] = ("method", "kind")
) -> ReportTable:
    """Mean and median scores per method, or per method and window kind.

    Medians average the two middle values for an even count; MAPE statistics use
    the windows with a defined MAPE only.

    Raises:
        MetricError: If there is no row or the grouping is not supported.

    """
    group_by = tuple(group_by)
    if group_by not in (("method",), ("method", "kind")):
        raise MetricError(f"Unsupported grouping {group_by}")
    df = rows_frame(rows)
    if df.empty:
        raise MetricError("Cannot aggregate an empty set of rows")
    if group_by == ("method",):
        df = df.assign(kind="All")

    records = []
    for (method, kind), group in df.groupby(["method", "kind"], sort=False):
        records.append({"method": method, "kind": kind, **_group_stats(group)})
    frame = pd.DataFrame.from_records(records)
    frame = _ordered(frame)
    return ReportTable(frame=frame, group_by=group_by)


def _ordered(frame: pd.DataFrame) -> pd.DataFrame:
    method_rank = frame["method"].map({m: i for i, m in enumerate(METHODS)})
    kind_rank = frame["kind"].map({k: i for i, k in enumerate(KIND_ORDER)})
    order = np.lexsort(
        (kind_rank.fillna(99).to_numpy(), method_rank.fillna(99).to_numpy())
    )
    return frame.iloc[order].reset_index(drop=True)


def report_frame(
    rows: Sequence[MetricRow], methods: Sequence[str] = METHODS
) -> pd.DataFrame:
    """The comparison tables over two scopes, overall and per window kind.

    Scope 'all' covers every window of FIT and ARIMA; scope 'test' covers the
    windows of test-split categories, the only ones the RNN is scored on. A
    requested method without rows is listed as absent; the lowest value of each
    score column within a (scope, kind) block is named in `best`.

    """
    rows = list(rows)
    if not rows:
        raise MetricError("Cannot report an empty set of rows")
    scopes = [
        ("all", [m for m in methods if m != "RNN"], rows),
        ("test", list(methods), [r for r in rows if r.split == "test"]),
    ]
    blocks = []
    for scope, scope_methods, scope_rows in scopes:
        if not scope_methods:
            continue
        scope_rows = [r for r in scope_rows if r.method in scope_methods]
        if scope_rows:
            overall = aggregate(scope_rows, ("method",)).frame
            by_kind = aggregate(scope_rows, ("method", "kind")).frame
            frame = pd.concat([overall, by_kind], ignore_index=True)
        else:
            frame = pd.DataFrame(columns=["method", "kind", "n_windows"])
        present = set(frame["method"])
        missing = [
            {"method": m, "kind": "All", "n_windows": 0}
            for m in scope_methods
            if m not in present
        ]
        if missing:
            frame = pd.concat([frame, pd.DataFrame(missing)], ignore_index=True)
        frame = frame.reindex(columns=REPORT_COLUMNS[1:])
        frame.insert(0, "scope", scope)
        blocks.append(_ordered_scope(frame))

    report = pd.concat(blocks, ignore_index=True)
    report["n_windows"] = report["n_windows"].astype(int)
    for column in ("n_mape_excluded", "n_zero_months"):
        report[column] = report[column].fillna(0).astype(int)
    report["absent"] = report["n_windows"] == 0
    report["best"] = _best_flags(report)
    return report


def _ordered_scope(frame: pd.DataFrame) -> pd.DataFrame:
    ranks = {"All": 0, **{k: i + 1 for i, k in enumerate(KIND_ORDER[:2])}}
    kind_rank = frame["kind"].map(ranks)
    method_rank = frame["method"].map({m: i for i, m in enumerate(METHODS)})
    order = np.lexsort((method_rank.to_numpy(), kind_rank.to_numpy()))
    return frame.iloc[order].reset_index(drop=True)


def _best_flags(report: pd.DataFrame) -> pd.Series:
    flags = pd.Series([""] * len(report), index=report.index, dtype=object)
    for _, block in report.groupby(["scope", "kind"], sort=False):
        for column in SCORE_COLUMNS:
            values = block[column].astype(float)
            if values.notna().sum() < 2:
                continue
            best = values.idxmin()
            flags[best] = ";".join(filter(None, [flags[best], column]))
    return flags


def _cell(row, stat: str) -> str:
    mean, median = row[f"{stat}_mean"], row[f"{stat}_median"]
    if pd.isna(mean):
        return "n/a"
    best = row["best"].split(";")
    mean_mark = "*" if f"{stat}_mean" in best else ""
    median_mark = "*" if f"{stat}_median" in best else ""
    return f"{mean:.1f}{mean_mark}/{median:.1f}{median_mark}"


def format_report(report: pd.DataFrame, fmt: str = "text") -> str:
    """Renders report_frame as an aligned text table or as CSV.

    In the text table each score cell reads 'mean/median' and the best value of a
    block is starred.

    """
    if fmt == "csv":
        return report.to_csv(index=False, lineterminator="\n", float_format="%.6f")
    if fmt != "text":
        raise ValueError(f"Unknown report format {fmt!r}")

    lines = []
    titles = {"all": "All windows", "test": "Test-split windows"}
    for scope, block in report.groupby("scope", sort=False):
        cells = []
        for _, row in block.iterrows():
            if row["absent"]:
                cells.append([row["method"], row["kind"], "0", "absent", "", "", ""])
                continue
            cells.append(
                [
                    row["method"],
                    row["kind"],
                    str(row["n_windows"]),
                    _cell(row, "rmse"),
                    _cell(row, "mape"),
                    str(row["n_mape_excluded"]),
                    f"{row['mape_skew']:.2f}" if pd.notna(row["mape_skew"]) else "n/a",
                ]
            )
        table = pd.DataFrame(
            cells,
            columns=["Method", "Window", "n", "RMSE", "MAPE", "MAPE excl.", "MAPE skew"],
        )
        lines.append(titles.get(scope, scope))
        lines.append(table.to_string(index=False))
        lines.append("")
    return "\n".join(lines)


def emit_plotdata(
    window: ForecastWindow, forecasts: Dict[str, Sequence[float]], path
) -> Path:
    """Writes actuals and each method's forecast of one window as CSV.

    month_index counts months since the series start; methods without a forecast
    are left blank.

    Raises:
        ValueError: If no forecast is given.

    """
    forecasts = {m.upper(): f for m, f in forecasts.items() if f is not None}
    if not forecasts:
        raise ValueError("emit_plotdata needs at least one forecast")
    horizon = len(window.actuals)
    start = len(window.history)
    df = pd.DataFrame(
        {
            "month_index": np.arange(start, start + horizon),
            "actual": window.actuals,
        }
    )
    for method in METHODS:
        values = forecasts.get(method)
        df[method.lower()] = (
            np.asarray(values, dtype=np.float64) if values is not None else np.nan
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df[PLOT_COLUMNS].to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def write_rows(rows: Iterable[MetricRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows_frame(rows).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def read_rows(path) -> List[MetricRow]:
    df = pd.read_csv(path, dtype={"category_id": str, "window_id": str, "split": str})
    if list(df.columns) != ROW_COLUMNS:
        raise ValueError(f"Expected columns {ROW_COLUMNS}, got {list(df.columns)}")
    rows = []
    for rec in df.to_dict("records"):
        rows.append(
            MetricRow(
                method=rec["method"],
                category_id=rec["category_id"],
                kind=rec["kind"],
                rmse=float(rec["rmse"]),
                mape=None if pd.isna(rec["mape"]) else float(rec["mape"]),
                window_id="" if pd.isna(rec["window_id"]) else rec["window_id"],
                split="" if pd.isna(rec["split"]) else rec["split"],
                n_zero_actuals=int(rec["n_zero_actuals"]),
            )
        )
    return rows


def write_failures(failures: Iterable[WindowFailure], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [asdict(f) for f in failures]
    columns = ["method", "category_id", "kind", "reason", "window_id"]
    pd.DataFrame.from_records(records, columns=columns).to_csv(
        path, index=False, encoding="utf-8", lineterminator="\n"
    )
    return path


def write_fits(fits: Iterable[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(fits), indent=1) + "\n", encoding="utf-8")
    return path
