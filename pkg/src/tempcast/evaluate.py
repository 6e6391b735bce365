"""Forecast error metrics and comparison artifacts.

Computes MAE/RMSE per model and emits the tidy CSVs behind the standard
comparison charts (forecast overlay, cumulative absolute error, signed error
histogram) plus a gnuplot script that renders them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hybrid import ForecastReport

METRIC_MODELS = ("hybrid", "sarima_only", "lstm_only")


@dataclass(frozen=True)
class MetricSummary:
    model_name: str
    mae: float
    rmse: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a summary needs at least one evaluated day")
        if not 0.0 <= self.mae <= self.rmse + 1e-12:
            raise ValueError(f"impossible metrics mae={self.mae} rmse={self.rmse}")


def _check_pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise ValueError("prediction and actual vectors must have equal length")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, actual


def mae(pred, actual) -> float:
    pred, actual = _check_pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def rmse(pred, actual) -> float:
    pred, actual = _check_pair(pred, actual)
    return float(np.sqrt(np.mean(np.square(pred - actual))))


def cumulative_abs_error(pred, actual) -> np.ndarray:
    """Running sum of absolute errors; final element equals n * mae."""
    pred, actual = _check_pair(pred, actual)
    return np.cumsum(np.abs(pred - actual))


def error_histogram(pred, actual, bin_width: float = 1.0) -> list[tuple[float, float, int]]:
    """Signed errors binned into [k*w, (k+1)*w); rows are (low, high, count).

    The returned bins span the observed range contiguously, so counts always
    sum to the number of samples.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    pred, actual = _check_pair(pred, actual)
    errors = pred - actual
    indices = np.floor(errors / bin_width).astype(int)
    lo, hi = indices.min(), indices.max()
    counts = np.bincount(indices - lo, minlength=hi - lo + 1)
    return [
        (k * bin_width, (k + 1) * bin_width, int(counts[k - lo]))
        for k in range(lo, hi + 1)
    ]


def comparison_report(
    report: ForecastReport,
    actuals,
    out_dir,
    bin_width: float = 1.0,
) -> list[MetricSummary]:
    """Score all three models against actuals and write the figure CSVs.

    Emits metrics.csv, forecast_comparison.csv, cumulative_error.csv,
    error_histogram.csv, a readable metrics.txt, and plots.gp. Summaries are
    ordered by ascending MAE.
    """
    actuals = np.asarray(actuals, dtype=float)
    if len(actuals) != report.horizon:
        raise ValueError(
            f"actuals cover {len(actuals)} days but the forecast horizon is {report.horizon}"
        )
    if not np.isfinite(actuals).all():
        raise ValueError("actuals contain missing values over the evaluation horizon")

    predictions = {
        "hybrid": report.hybrid_forecast,
        "sarima_only": report.sarima_only,
        "lstm_only": report.lstm_only,
    }
    summaries = [
        MetricSummary(name, mae(pred, actuals), rmse(pred, actuals), len(actuals))
        for name, pred in predictions.items()
    ]
    summaries.sort(key=lambda s: s.mae)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        fh.write("model,mae_c,rmse_c,n\n")
        for s in summaries:
            fh.write(f"{s.model_name},{s.mae!r},{s.rmse!r},{s.n}\n")

    write_forecast_comparison(report, out_dir / "forecast_comparison.csv", actuals)

    curves = {name: cumulative_abs_error(pred, actuals) for name, pred in predictions.items()}
    with open(out_dir / "cumulative_error.csv", "w", newline="") as fh:
        fh.write("day,hybrid,sarima_only,lstm_only\n")
        for k in range(report.horizon):
            fh.write(
                f"{k + 1},{float(curves['hybrid'][k])!r},"
                f"{float(curves['sarima_only'][k])!r},{float(curves['lstm_only'][k])!r}\n"
            )

    with open(out_dir / "error_histogram.csv", "w", newline="") as fh:
        fh.write("bin_low,bin_high,model,count\n")
        for name, pred in predictions.items():
            for low, high, count in error_histogram(pred, actuals, bin_width):
                fh.write(f"{low!r},{high!r},{name},{count}\n")

    _write_metrics_text(out_dir / "metrics.txt", summaries)
    _write_gnuplot_script(out_dir / "plots.gp")
    return summaries


def write_forecast_comparison(report: ForecastReport, path, actuals=None) -> None:
    """Per-day overlay of the three forecasts and (when known) the actuals."""
    if actuals is None:
        actuals = report.actual

    def cell(value: float) -> str:
        return "" if math.isnan(value) else repr(float(value))

    with open(path, "w", newline="") as fh:
        fh.write("date,actual,hybrid,sarima_only,lstm_only\n")
        for k in range(report.horizon):
            fh.write(
                f"{report.dates[k].isoformat()},{cell(actuals[k])},"
                f"{cell(report.hybrid_forecast[k])},{cell(report.sarima_only[k])},"
                f"{cell(report.lstm_only[k])}\n"
            )


def _write_metrics_text(path, summaries) -> None:
    lines = [f"{'model':<12} {'mae_c':>8} {'rmse_c':>8} {'n':>5}"]
    for s in summaries:
        lines.append(f"{s.model_name:<12} {s.mae:8.3f} {s.rmse:8.3f} {s.n:5d}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_gnuplot_script(path) -> None:
    script = """\
# Render the comparison figures: gnuplot plots.gp
set datafile separator ','
set key autotitle columnhead outside
set grid

set terminal pngcairo size 1200,500
set output 'forecast_comparison.png'
set xdata time
set timefmt '%Y-%m-%d'
set format x '%b %y'
set ylabel 'temperature (C)'
plot 'forecast_comparison.csv' using 1:2 with lines lw 2 lc 'black', \\
     '' using 1:3 with lines, '' using 1:4 with lines, '' using 1:5 with lines

set output 'cumulative_error.png'
unset xdata
set xlabel 'forecast day'
set ylabel 'cumulative |error| (C)'
plot 'cumulative_error.csv' using 1:2 with lines, \\
     '' using 1:3 with lines, '' using 1:4 with lines

set output 'error_histogram.png'
set style fill solid 0.5
set xlabel 'signed error (C)'
set ylabel 'days'
plot 'error_histogram.csv' using (($1+$2)/2):(stringcolumn(3) eq 'hybrid' ? $4 : 1/0) with boxes title 'hybrid', \\
     '' using (($1+$2)/2):(stringcolumn(3) eq 'sarima_only' ? $4 : 1/0) with boxes title 'sarima_only', \\
     '' using (($1+$2)/2):(stringcolumn(3) eq 'lstm_only' ? $4 : 1/0) with boxes title 'lstm_only'
"""
    with open(path, "w") as fh:
        fh.write(script)
