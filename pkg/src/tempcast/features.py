"""Model-ready feature construction.

Turns a clean DailySeries into scaled feature rows with an explicit annual
cycle (sine/cosine of the day-of-year angle), split chronologically, and
sliced into sliding supervised windows.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

# One full cycle per year; the fraction absorbs leap days over multi-year spans.
DAYS_PER_YEAR = 365.25

SCALED_COLUMNS = ("temperature", "dew_point", "pressure_delta", "wind_speed", "visibility")
FOURIER_COLUMNS = ("fourier_sin", "fourier_cos")
FEATURE_COLUMNS = SCALED_COLUMNS + FOURIER_COLUMNS

# Everything the forecaster cannot know ahead of time except temperature itself.
EXOGENOUS_COLUMNS = ("dew_point", "pressure_delta", "wind_speed", "visibility")


def day_of_year_index(day: dt.date) -> int:
    """Zero-based day of year (Jan 1 -> 0)."""
    return (day - dt.date(day.year, 1, 1)).days


def fourier_encode(day_index: float) -> tuple[float, float]:
    """Sine and cosine of the annual phase angle for a zero-based day index."""
    angle = 2.0 * math.pi * day_index / DAYS_PER_YEAR
    return math.sin(angle), math.cos(angle)


@dataclass(frozen=True)
class Scaler:
    """Per-column min/max recorded on training rows only."""

    columns: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise ValueError("scaler max below min")

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        """Map each column through (x - min) / (max - min); constant columns to 0.5."""
        rows = _check_columns(rows, self.n_columns)
        span = self.maxs - self.mins
        out = np.empty_like(rows, dtype=float)
        for j in range(self.n_columns):
            if span[j] == 0.0:
                out[:, j] = 0.5
            else:
                out[:, j] = (rows[:, j] - self.mins[j]) / span[j]
        return out

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        scaled = _check_columns(scaled, self.n_columns)
        return scaled * (self.maxs - self.mins) + self.mins

    def column_transform(self, index: int, value: float) -> float:
        span = self.maxs[index] - self.mins[index]
        if span == 0.0:
            return 0.5
        return float((value - self.mins[index]) / span)

    def column_inverse(self, index: int, value: float) -> float:
        return float(value * (self.maxs[index] - self.mins[index]) + self.mins[index])


def _check_columns(rows: np.ndarray, expected: int) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != expected:
        raise ValueError(f"expected {expected} columns, got {rows.shape[1]}")
    return rows


def fit_scaler(rows: np.ndarray, columns: tuple[str, ...] | None = None) -> Scaler:
    """Record per-column min/max over the given (training) rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] < 1 or rows.size == 0:
        raise ValueError("cannot fit a scaler on empty input")
    if columns is None:
        columns = tuple(f"col{j}" for j in range(rows.shape[1]))
    if len(columns) != rows.shape[1]:
        raise ValueError("column names do not match row width")
    return Scaler(tuple(columns), rows.min(axis=0), rows.max(axis=0))


def chronological_split(rows: np.ndarray, test_days: int) -> tuple[np.ndarray, np.ndarray]:
    """Last test_days rows become the test set; order is never shuffled."""
    rows = np.asarray(rows)
    if test_days < 0:
        raise ValueError("test_days must be non-negative")
    if test_days >= len(rows):
        raise ValueError(f"test_days={test_days} leaves no training rows out of {len(rows)}")
    split = len(rows) - test_days
    return rows[:split], rows[split:]


@dataclass(frozen=True)
class FeatureMatrix:
    """Scaled per-day feature rows plus the scaler that produced them.

    Columns follow FEATURE_COLUMNS: the five physical variables MinMax-scaled
    on the training split, then the two Fourier terms as-is (already bounded).
    split_index is the first test row.
    """

    values: np.ndarray
    dates: tuple[dt.date, ...]
    scaler: Scaler
    split_index: int

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def train_values(self) -> np.ndarray:
        return self.values[: self.split_index]

    @property
    def test_values(self) -> np.ndarray:
        return self.values[self.split_index:]

    def column_index(self, name: str) -> int:
        return FEATURE_COLUMNS.index(name)


def build_feature_matrix(series, test_days: int) -> FeatureMatrix:
    """Scale the physical columns (fit on training rows only) and add Fourier terms.

    The input series must already be gap-free with pressure differenced; its
    "pressure" column is carried as pressure_delta.
    """
    physical = np.column_stack([
        series.columns["temperature"],
        series.columns["dew_point"],
        series.columns["pressure"],
        series.columns["wind_speed"],
        series.columns["visibility"],
    ])
    if np.isnan(physical).any():
        raise ValueError("series still has gaps; run fill_gaps first")
    train_rows, _ = chronological_split(physical, test_days)
    scaler = fit_scaler(train_rows, SCALED_COLUMNS)
    scaled = scaler.transform(physical)

    dates = series.dates
    fourier = np.array([fourier_encode(day_of_year_index(d)) for d in dates])
    values = np.hstack([scaled, fourier])
    values.flags.writeable = False
    return FeatureMatrix(values, tuple(dates), scaler, len(dates) - test_days)


@dataclass(frozen=True)
class WindowBatch:
    """Supervised samples: inputs[k] covers rows k..k+W-1, targets[k] is row k+W."""

    inputs: np.ndarray  # (samples, window, features)
    targets: np.ndarray  # (samples,)

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets disagree on sample count")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


def build_windows(rows: np.ndarray, targets: np.ndarray, window: int) -> WindowBatch:
    """Slice rows into sliding windows, each predicting the next day's target."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if len(targets) != len(rows):
        raise ValueError("targets must align row-for-row with inputs")
    if window < 1:
        raise ValueError("window must be at least 1")
    n_samples = len(rows) - window
    if n_samples < 1:
        raise ValueError(f"need at least {window + 1} rows, got {len(rows)}")
    inputs = np.stack([rows[k: k + window] for k in range(n_samples)])
    return WindowBatch(inputs, targets[window:].copy())
