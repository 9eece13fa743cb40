#!/usr/bin/env python

"""Tests for `techcast.plotting`."""

import numpy as np
import pandas as pd
from bokeh.models import Div, Span

from techcast.ingest import MonthlySeries
from techcast.plotting import (
    new_benchmark_layout,
    new_forecast_comparison_figure,
    new_series_figure,
    new_upload_distribution_figure,
    save_figure,
)
from techcast.seriesstore import make_windows, upload_histogram, upload_totals


def series(n=120, category="cs.LG"):
    return MonthlySeries(category, "2000-01", np.arange(1, n + 1))


def test_forecast_comparison_figure():
    em, _ = make_windows(series())
    forecasts = {"FIT": np.full(36, 50.0), "arima": np.full(36, 45.0), "RNN": None}
    paths = np.random.default_rng(0).normal(48.0, 3.0, size=(100, 36))
    p = new_forecast_comparison_figure(em, forecasts, paths=paths)
    assert "cs.LG" in p.title.text
    # observed, band and two forecasts; RNN has no point forecast here
    assert len(p.renderers) == 4
    assert len(p.legend.items) == 4
    spans = [r for r in p.center if isinstance(r, Span)]
    assert spans[0].location == len(em.history) - 0.5


def test_series_and_distribution_figures():
    many = [series(120, "cs.LG"), series(110, "cs.AI"), series(130, "math.CO")]
    assert "cs.AI" in new_series_figure(many[1]).title.text
    histogram = upload_histogram(upload_totals(many), n_bins=4)
    p = new_upload_distribution_figure(histogram)
    assert len(p.renderers) == 1


def test_benchmark_layout_saved(tmp_path):
    em, est = make_windows(series())
    figures = [
        new_forecast_comparison_figure(w, {"ARIMA": np.zeros(36)}) for w in (em, est)
    ]
    report = pd.DataFrame({"method": ["ARIMA"], "mape_mean": [12.5]})
    page = new_benchmark_layout(figures, report, title="Fixture")
    assert len(page.select(Div)) == 2
    path = save_figure(page, tmp_path / "out" / "report.html", title="Fixture")
    html = path.read_text()
    assert "Fixture" in html and "mape_mean" in html
