"""Command-line entry point: ``techcast ingest|run|report|gradcheck|synth``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from . import __version__
from .config import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_methods,
    write_config,
)
from .deepforecast import (
    CellType,
    ModelSelectionError,
    TrainingDivergedError,
    forecast,
    gradient_check,
    init_weights,
    save_weights,
    select_model,
    write_loss_curve,
)
from .evalharness import (
    MetricError,
    emit_plotdata,
    format_report,
    read_rows,
    report_frame,
    run_benchmark,
    window_rng,
    write_failures,
    write_fits,
    write_rows,
)
from .ingest import (
    EmptyCorpusError,
    IngestError,
    ingest_file,
    load_series,
    persist_series,
    write_summary,
)
from .plotting import (
    new_benchmark_layout,
    new_forecast_comparison_figure,
    new_series_figure,
    new_upload_distribution_figure,
    save_figure,
)
from .seriesstore import (
    SeriesTooShortError,
    SplitError,
    augment_all,
    make_all_windows,
    save_split,
    select,
    split_categories,
    split_windows,
    upload_histogram,
    upload_totals,
)
from .synth import gen_arima, gen_logistic
from .utils import configure_logging as configure_sink
from .utils import set_progress

RUNTIME_ERRORS = (
    ConfigError,
    EmptyCorpusError,
    IngestError,
    MetricError,
    ModelSelectionError,
    SeriesTooShortError,
    SplitError,
    TrainingDivergedError,
    OSError,
    ValueError,
)


class RunError(RuntimeError):
    """Raised when a benchmark run cannot produce any result."""


def configure_logging(verbose: bool = False, quiet: bool = False):
    configure_sink("DEBUG" if verbose else "WARNING" if quiet else "INFO")
    set_progress(not quiet)


def cmd_ingest(args: argparse.Namespace) -> int:
    out = Path(args.out)
    summary_path = (
        Path(args.summary) if args.summary else out.with_suffix(".summary.json")
    )
    series, summary = ingest_file(
        args.input, min_length=args.min_length, snapshot_end=args.snapshot_end
    )
    if not series:
        logger.error(f"No category reaches {args.min_length} months")
        return 1
    persist_series(series, out)
    write_summary(summary, summary_path)
    print(f"Records read:        {summary.n_records_read:,}")
    print(f"Records skipped:     {summary.n_records_skipped:,}")
    print(f"  malformed:         {summary.n_records_malformed:,}")
    print(f"  after snapshot:    {summary.n_records_trimmed:,}")
    print(f"  dropped category:  {summary.n_records_in_dropped:,}")
    print(f"Categories kept:     {len(summary.categories)}")
    print(f"Categories dropped:  {len(summary.dropped_categories)}")
    print(f"Snapshot end month:  {summary.snapshot_end_month}")
    print(f"Series written to {out}, summary to {summary_path}")
    return 0


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    return config.with_overrides(
        series_path=args.series,
        seed=args.seed,
        methods=args.methods,
        output_dir=args.output,
        n_jobs=args.n_jobs,
    )


def train_rnn(config: ExperimentConfig, series, split, windows_by_split, out: Path):
    """Hyperparameter search of the RNN; returns (weights, model config) or None."""
    rnn = config.rnn
    samples = augment_all(
        select(series, split.train),
        window_len=rnn.context_len + rnn.horizon,
        context_len=rnn.context_len,
    )
    try:
        selection = select_model(
            rnn.model_configs(config.seed), samples, windows_by_split["validation"]
        )
    except (ModelSelectionError, ValueError) as e:
        logger.warning(f"RNN skipped: {e}")
        return None
    save_weights(selection.weights, selection.config, out / "rnn_weights.json")
    write_loss_curve(selection.losses, out / "loss_curve.csv")
    pd.DataFrame(
        {
            "config": list(selection.scores),
            "validation_mape": list(selection.scores.values()),
        }
    ).to_csv(out / "model_selection.csv", index=False, lineterminator="\n")
    return selection.weights, selection.config


def write_html_report(series, test_windows, result, report, rnn, out: Path) -> Path:
    """Upload distribution, test-category series and their forecast comparisons."""
    totals = upload_totals(series)
    figures = [new_upload_distribution_figure(upload_histogram(totals))]
    test_categories = {w.category_id for w in test_windows}
    figures.extend(
        new_series_figure(s) for s in series if s.category_id in test_categories
    )
    for window in test_windows:
        forecasts = result.forecasts.get(window.fingerprint, {})
        if not forecasts:
            continue
        paths = None
        if rnn is not None and "RNN" in forecasts:
            weights, model_config = rnn
            paths = forecast(
                window.history,
                weights,
                model_config,
                window_rng(model_config.seed, window),
            ).paths
        figures.append(new_forecast_comparison_figure(window, forecasts, paths))
    return save_figure(
        new_benchmark_layout(figures, report, title="Forecast comparison"),
        out / "report.html",
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "config.yaml")

    series = [s for s in load_series(config.series_path) if len(s) >= config.min_length]
    windows = make_all_windows(series, horizon=config.rnn.horizon)
    if not windows:
        raise RunError(f"No valid window in {config.series_path}")
    split = split_categories(
        [s.category_id for s in series],
        seed=config.seed,
        val_fraction=config.val_fraction,
        test_fraction=config.test_fraction,
    )
    save_split(split, out / "split.json")
    by_split = split_windows(windows, split)
    logger.info(
        f"{len(windows)} windows; categories train/validation/test = "
        f"{len(split.train)}/{len(split.validation)}/{len(split.test)}"
    )

    methods = list(config.methods)
    rnn = None
    if "RNN" in methods:
        rnn = train_rnn(config, series, split, by_split, out)
        if rnn is None:
            methods.remove("RNN")

    result = run_benchmark(
        windows,
        methods,
        split=split,
        rnn=rnn,
        scurve_options=config.scurve,
        arima_options=config.arima,
        seed=config.seed,
        n_jobs=config.n_jobs,
    )
    if not result.rows:
        raise RunError("Every window failed")
    write_rows(result.rows, out / "metrics.csv")
    write_failures(result.failures, out / "failures.csv")
    write_fits(result.fits, out / "fits.json")

    report = report_frame(result.rows, METHODS)
    (out / "report.csv").write_text(format_report(report, "csv"), encoding="utf-8")
    text = format_report(report, "text")
    (out / "report.txt").write_text(text, encoding="utf-8")

    for window in windows:
        forecasts = result.forecasts.get(window.fingerprint, {})
        if forecasts:
            name = f"{window.category_id}_{window.kind.value.lower()}.csv"
            emit_plotdata(window, forecasts, out / "plotdata" / name)
    if args.html:
        write_html_report(series, by_split["test"], result, report, rnn, out)

    if result.failures:
        logger.warning(
            f"{len(result.failures)} window forecasts failed, see failures.csv"
        )
    print(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_rows(args.rows)
    if not rows:
        logger.error(f"No metric row in {args.rows}")
        return 1
    text = format_report(report_frame(rows, parse_methods(args.methods)), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    weights = init_weights(CellType(args.cell), args.hidden, rng)
    sample = rng.uniform(0.0, 2.0, size=args.length)
    error = gradient_check(
        weights,
        sample,
        epsilon=args.epsilon,
        n_checks=args.n_checks,
        seed=args.seed,
        context_len=args.length // 2,
    )
    print(f"{args.cell} hidden={args.hidden}: max relative error {error:.3e}")
    return 0 if error < args.tol else 1


def cmd_synth(args: argparse.Namespace) -> int:
    if args.kind == "logistic":
        series = gen_logistic(
            args.L, args.k, args.t0, args.n, noise_sigma=args.noise, seed=args.seed
        )
    else:
        series = gen_arima(
            args.phi, args.theta, args.c, args.sigma, args.n, seed=args.seed
        )
    persist_series([series], args.out)
    print(f"Wrote {len(series)} months of {series.category_id} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="techcast",
        description="Benchmark S-curve, ARIMA and RNN forecasts of arXiv uploads.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Build monthly series from a metadata snapshot")
    p.add_argument("--input", required=True, help="JSON-lines snapshot, plain or gzip")
    p.add_argument("--out", default="series.csv", help="Series CSV to write")
    p.add_argument("--summary", help="Summary JSON (default: next to --out)")
    p.add_argument("--min-length", type=int, default=108)
    p.add_argument("--snapshot-end", help="First month not counted, YYYY-MM")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="Run the benchmark")
    p.add_argument("--config", help="Experiment YAML file")
    p.add_argument("--series", help="Series CSV (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", help="Comma-separated subset of fit,arima,rnn")
    p.add_argument("--output", help="Output directory")
    p.add_argument("--n-jobs", type=int, dest="n_jobs")
    p.add_argument("--html", action="store_true", help="Also write report.html")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="Format a metric rows CSV")
    p.add_argument("--rows", required=True)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--methods", default="fit,arima,rnn")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="Check backpropagation by finite differences")
    p.add_argument("--cell", choices=[c.value for c in CellType], default="LSTM")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--length", type=int, default=72)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--n-checks", type=int, default=50, dest="n_checks")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="Write a synthetic series")
    p.add_argument("kind", choices=["logistic", "arima"])
    p.add_argument("--n", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--L", type=float, default=500.0)
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--t0", type=float, default=60.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=0.7)
    p.add_argument("--theta", type=float, default=0.3)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except (RunError, *RUNTIME_ERRORS) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
