from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from bokeh.io import save
from bokeh.layouts import layout
from bokeh.models import ColumnDataSource, Div, HoverTool, Span
from bokeh.plotting import figure
from bokeh.resources import CDN

from .ingest import MonthlySeries
from .seriesstore import ForecastWindow
from .utils import format_df

METHOD_COLORS = {"FIT": "firebrick", "ARIMA": "darkorange", "RNN": "seagreen"}


def new_forecast_comparison_figure(
    window: ForecastWindow,
    forecasts: Dict[str, Sequence[float]],
    paths: np.ndarray | None = None,
    width: int = 900,
    height: int = 500,
):
    """Plots a window's history and actuals against each method's forecast.

    Args:
        window (ForecastWindow):
            The evaluation window

        forecasts (Dict[str, Sequence[float]]):
            Point forecast per method name

        paths (np.ndarray, optional):
            Sampled RNN paths (n_paths x horizon), drawn as a 5-95% band

        width (int, optional):
            Width of the plot

        height (int, optional):
            Height of the plot

    """
    n_hist = len(window.history)
    horizon = len(window.actuals)
    p = figure(
        title=f"{window.category_id} ({window.kind.value} window)",
        width=width,
        height=height,
    )
    p.xaxis.axis_label = "Months since first upload"
    p.yaxis.axis_label = "Uploads per month"
    p.yaxis.formatter.use_scientific = False

    months = np.arange(n_hist + horizon)
    observed = np.concatenate([window.history, window.actuals])
    line = p.line(months, observed, line_width=2, color="navy", legend_label="Observed")
    p.add_tools(
        HoverTool(tooltips=[("Month", "$x{0}"), ("Uploads", "$y{0}")], renderers=[line])
    )

    future = np.arange(n_hist, n_hist + horizon)
    if paths is not None and len(paths):
        low, high = np.percentile(paths, [5, 95], axis=0)
        p.varea(
            x=future,
            y1=low,
            y2=high,
            color=METHOD_COLORS["RNN"],
            alpha=0.15,
            legend_label="RNN 5-95%",
        )
    for method, values in forecasts.items():
        if values is None:
            continue
        p.line(
            future,
            np.asarray(values, dtype=float),
            line_width=2,
            line_dash="dashed",
            color=METHOD_COLORS.get(method.upper(), "gray"),
            legend_label=method.upper(),
        )
    # end of the history
    p.add_layout(
        Span(
            location=n_hist - 0.5,
            dimension="height",
            line_color="black",
            line_dash="dotted",
            line_width=1,
        )
    )
    p.legend.location = "top_left"
    return p


def new_series_figure(series: MonthlySeries, width: int = 900, height: int = 400):
    """Monthly upload counts of one subcategory."""
    source = ColumnDataSource(
        data={
            "month": series.months.to_timestamp(),
            "count": series.values,
        }
    )
    p = figure(
        title=f"Monthly uploads of {series.category_id}",
        x_axis_type="datetime",
        width=width,
        height=height,
    )
    p.xaxis.axis_label = "Month"
    p.yaxis.axis_label = "Uploads"
    p.yaxis.formatter.use_scientific = False
    line = p.line("month", "count", source=source, line_width=1, color="navy")
    p.add_tools(
        HoverTool(
            tooltips=[("Month", "@month{%Y-%m}"), ("Uploads", "@count{0,0}")],
            formatters={"@month": "datetime"},
            renderers=[line],
        )
    )
    return p


def new_upload_distribution_figure(
    histogram: pd.DataFrame, width: int = 900, height: int = 400
):
    """Log-binned histogram of total uploads per category (see upload_histogram)."""
    p = figure(
        title="Total uploads per subcategory",
        x_axis_type="log",
        width=width,
        height=height,
    )
    p.xaxis.axis_label = "Total uploads"
    p.yaxis.axis_label = "Subcategories"
    p.quad(
        left="bin_left",
        right="bin_right",
        top="n_categories",
        bottom=0,
        source=ColumnDataSource(histogram),
        fill_color="navy",
        line_color="white",
        alpha=0.6,
    )
    return p


def new_report_div(report: pd.DataFrame, width: int = 900):
    return Div(text=format_df(report, width=width))


def new_benchmark_layout(
    figures: List, report: pd.DataFrame | None = None, title: str = "Benchmark"
):
    rows = [[Div(text=f"<h1 style='text-align:center'>{title}</h1>")]]
    if report is not None:
        rows.append([new_report_div(report)])
    rows.extend([f] for f in figures)
    return layout(rows)


def save_figure(obj, path, title: str = "techcast") -> Path:
    """Writes a bokeh figure or layout as a standalone HTML file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save(obj, filename=str(path), resources=CDN, title=title)
    return path
