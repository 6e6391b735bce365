"""Composition of the SARIMA baseline with LSTM residual corrections.

The trained pair forecasts recursively: one long SARIMA forecast anchors the
path, the LSTM predicts next-day residuals from a rolling feature window, and
corrections past the first few days are damped geometrically so the baseline
dominates at long range. Also provides the two single-model baselines used
for comparison.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import lstm as lstm_mod
from . import sarima as sarima_mod
from .features import (
    EXOGENOUS_COLUMNS,
    FEATURE_COLUMNS,
    FeatureMatrix,
    Scaler,
    build_feature_matrix,
    build_windows,
    day_of_year_index,
    fit_scaler,
    fourier_encode,
)
from .ingest import DailySeries
from .lstm import LstmNetwork, TrainConfig, forward, init_network, train
from .sarima import SarimaModel, SarimaOrder

DOY_SLOTS = 366

REPORT_COLUMNS = (
    "date",
    "sarima_baseline",
    "raw_residual_pred",
    "applied_correction",
    "hybrid_forecast",
    "sarima_only",
    "lstm_only",
    "actual",
)


class HybridTrainError(Exception):
    """Training failed; the stage attribute names the step that broke."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class HybridConfig:
    order: SarimaOrder = SarimaOrder(1, 1, 1, 1, 1, 1, 12)
    window: int = 14
    test_days: int = 293
    direct_days: int = 5
    decay: float = 0.92
    decay_law: str = "geometric"
    units: tuple[int, int] = (64, 32)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.decay_law not in ("geometric", "flat"):
            raise ValueError(f"unknown decay law {self.decay_law!r}")


@dataclass(frozen=True)
class HybridModel:
    sarima: SarimaModel
    lstm: LstmNetwork
    feature_scaler: Scaler
    residual_scaler: Scaler
    window: int
    direct_days: int
    decay: float
    decay_law: str
    climatology: np.ndarray  # (366, len(EXOGENOUS_COLUMNS)), physical units
    train_end_date: dt.date

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.direct_days < 0:
            raise ValueError("direct_days must be non-negative")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.climatology.shape != (DOY_SLOTS, len(EXOGENOUS_COLUMNS)):
            raise ValueError(f"climatology must cover all {DOY_SLOTS} day-of-year slots")


@dataclass(frozen=True)
class SeedWindow:
    """The last fully observed feature rows, scaled, ending at last_date."""

    features: np.ndarray  # (window, n_features)
    last_date: dt.date

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[1] != len(FEATURE_COLUMNS):
            raise ValueError(f"seed window must be (days, {len(FEATURE_COLUMNS)})")
        if not np.isfinite(feats).all():
            raise ValueError("seed window contains non-finite values")
        object.__setattr__(self, "features", feats)


def seed_window_from_matrix(matrix: FeatureMatrix, window: int) -> SeedWindow:
    """Seed from the last `window` training rows of a feature matrix."""
    if matrix.split_index < window:
        raise ValueError("not enough training rows to seed the forecast window")
    rows = matrix.values[matrix.split_index - window: matrix.split_index]
    return SeedWindow(rows.copy(), matrix.dates[matrix.split_index - 1])


@dataclass(frozen=True)
class ForecastReport:
    """Per-day forecast records for the hybrid and both baselines."""

    dates: tuple[dt.date, ...]
    sarima_baseline: np.ndarray
    raw_residual_pred: np.ndarray
    applied_correction: np.ndarray
    hybrid_forecast: np.ndarray
    sarima_only: np.ndarray
    lstm_only: np.ndarray
    actual: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in REPORT_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} does not cover the horizon")
        if not np.array_equal(self.hybrid_forecast, self.sarima_baseline + self.applied_correction):
            raise ValueError("hybrid forecast must equal baseline plus correction")

    @property
    def horizon(self) -> int:
        return len(self.dates)


def decayed_correction(
    raw_residual: float,
    step: int,
    direct_days: float = 5,
    decay: float = 0.92,
    law: str = "geometric",
) -> float:
    """Damp a residual prediction by forecast day.

    The first direct_days steps pass through unchanged; afterwards the
    geometric law multiplies by decay^(step - direct_days) while the flat law
    applies a single decay factor.
    """
    if step < 1:
        raise ValueError("forecast step is 1-based")
    if step <= direct_days:
        return raw_residual
    if law == "geometric":
        return raw_residual * decay ** (step - direct_days)
    if law == "flat":
        return raw_residual * decay
    raise ValueError(f"unknown decay law {law!r}")


def compute_climatology(series: DailySeries, n_train: int) -> np.ndarray:
    """Per-day-of-year training means of each exogenous column (physical units).

    Day-of-year slots never observed in training fall back to the column mean.
    """
    dates = series.dates[:n_train]
    table = np.zeros((DOY_SLOTS, len(EXOGENOUS_COLUMNS)))
    counts = np.zeros(DOY_SLOTS)
    col_map = {"dew_point": "dew_point", "pressure_delta": "pressure",
               "wind_speed": "wind_speed", "visibility": "visibility"}
    values = np.column_stack([series.columns[col_map[c]][:n_train] for c in EXOGENOUS_COLUMNS])
    for row, day in enumerate(dates):
        slot = day_of_year_index(day)
        table[slot] += values[row]
        counts[slot] += 1
    overall = values.mean(axis=0)
    for slot in range(DOY_SLOTS):
        if counts[slot]:
            table[slot] /= counts[slot]
        else:
            table[slot] = overall
    return table


def _next_feature_row(
    feature_scaler: Scaler,
    climatology: np.ndarray,
    day: dt.date,
    scaled_temperature: float,
) -> np.ndarray:
    """A synthetic day for the rolling buffer: predicted temperature slot,
    climatological exogenous slots, calendar Fourier terms."""
    doy = day_of_year_index(day)
    physical = np.empty(len(feature_scaler.columns))
    physical[0] = 0.0  # placeholder; the temperature slot is overwritten below
    physical[1:] = climatology[doy]
    scaled = feature_scaler.transform(physical[np.newaxis])[0]
    scaled[0] = scaled_temperature
    sin_term, cos_term = fourier_encode(doy)
    return np.concatenate([scaled, [sin_term, cos_term]])


def train_hybrid(series: DailySeries, config: HybridConfig) -> tuple[HybridModel, list[float]]:
    """Fit SARIMA, learn its residuals with the LSTM, and compose the model.

    Returns the model plus the LSTM per-epoch loss history. The series must
    be preprocessed (gap-free, pressure differenced).
    """
    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise HybridTrainError(name, exc) from exc

    matrix = stage("features", lambda: build_feature_matrix(series, config.test_days))
    n_train = matrix.split_index
    if n_train < config.window + 2:
        raise HybridTrainError("features", ValueError("training split shorter than the window"))

    temperature_train = series.columns["temperature"][:n_train]
    sarima_model = stage("sarima-fit", lambda: sarima_mod.fit(config.order, temperature_train))
    residuals = stage("residuals", lambda: sarima_mod.in_sample_residuals(sarima_model))

    def build_training_windows():
        scaler = fit_scaler(residuals[:, np.newaxis], ("residual",))
        scaled = scaler.transform(residuals[:, np.newaxis])[:, 0]
        return scaler, build_windows(matrix.train_values, scaled, config.window)

    residual_scaler, windows = stage("windows", build_training_windows)

    def run_training():
        net = init_network(len(FEATURE_COLUMNS), config.units, seed=config.train.seed)
        return train(net, windows, config.train)

    network, history = stage("lstm-train", run_training)
    climatology = stage("climatology", lambda: compute_climatology(series, n_train))

    model = HybridModel(
        sarima=sarima_model,
        lstm=network,
        feature_scaler=matrix.scaler,
        residual_scaler=residual_scaler,
        window=config.window,
        direct_days=config.direct_days,
        decay=config.decay,
        decay_law=config.decay_law,
        climatology=climatology,
        train_end_date=matrix.dates[n_train - 1],
    )
    return model, history


def train_temperature_lstm(
    matrix: FeatureMatrix, config: HybridConfig
) -> tuple[LstmNetwork, list[float]]:
    """The standalone comparison network: same architecture, next-day scaled
    temperature as the target instead of the SARIMA residual."""
    temp_col = matrix.train_values[:, matrix.column_index("temperature")]
    windows = build_windows(matrix.train_values, temp_col, config.window)
    net = init_network(len(FEATURE_COLUMNS), config.units, seed=config.train.seed + 1)
    return train(net, windows, config.train)


def recursive_forecast(
    model: HybridModel,
    horizon: int,
    seed_window: SeedWindow,
    temperature_lstm: LstmNetwork | None = None,
    actuals: np.ndarray | None = None,
) -> ForecastReport:
    """Roll the hybrid forward `horizon` days past the seed window.

    Each step takes the SARIMA baseline from one long forecast, corrects it
    with the damped LSTM residual prediction, and feeds the corrected value
    back into the rolling window; exogenous inputs come from climatology and
    Fourier terms from the calendar.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if seed_window.features.shape[0] != model.window:
        raise ValueError(
            f"seed window has {seed_window.features.shape[0]} days, model needs {model.window}"
        )
    baseline = sarima_mod.forecast(model.sarima, horizon)
    temp_idx = FEATURE_COLUMNS.index("temperature")

    buffer = [row.copy() for row in seed_window.features]
    raw_preds = np.empty(horizon)
    corrections = np.empty(horizon)
    hybrid = np.empty(horizon)
    dates = []
    for step in range(1, horizon + 1):
        day = seed_window.last_date + dt.timedelta(days=step)
        window = np.asarray(buffer[-model.window:])
        raw_scaled = forward(model.lstm, window)
        raw = float(model.residual_scaler.inverse_transform(np.array([[raw_scaled]]))[0, 0])
        correction = decayed_correction(raw, step, model.direct_days, model.decay, model.decay_law)
        value = baseline[step - 1] + correction

        raw_preds[step - 1] = raw
        corrections[step - 1] = correction
        hybrid[step - 1] = value
        dates.append(day)

        scaled_temp = model.feature_scaler.column_transform(temp_idx, value)
        buffer.append(_next_feature_row(model.feature_scaler, model.climatology, day, scaled_temp))

    if temperature_lstm is not None:
        lstm_only = forecast_lstm_only(
            temperature_lstm, horizon, seed_window,
            feature_scaler=model.feature_scaler, climatology=model.climatology,
        )
    else:
        lstm_only = np.full(horizon, math.nan)
    if actuals is None:
        actuals = np.full(horizon, math.nan)
    else:
        actuals = np.asarray(actuals, dtype=float)

    return ForecastReport(
        dates=tuple(dates),
        sarima_baseline=baseline,
        raw_residual_pred=raw_preds,
        applied_correction=corrections,
        hybrid_forecast=hybrid,
        sarima_only=baseline.copy(),
        lstm_only=lstm_only,
        actual=actuals,
    )


def forecast_sarima_only(model: HybridModel, horizon: int) -> np.ndarray:
    """The uncorrected baseline; identical to the report's baseline column."""
    return sarima_mod.forecast(model.sarima, horizon)


def forecast_lstm_only(
    network: LstmNetwork,
    horizon: int,
    seed_window: SeedWindow,
    feature_scaler: Scaler,
    climatology: np.ndarray,
) -> np.ndarray:
    """Fully recursive temperature LSTM: every prediction feeds the next window.

    No decay and no baseline; long-horizon drift is measured, not prevented.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    window_len = seed_window.features.shape[0]
    temp_idx = FEATURE_COLUMNS.index("temperature")
    buffer = [row.copy() for row in seed_window.features]
    out = np.empty(horizon)
    for step in range(1, horizon + 1):
        day = seed_window.last_date + dt.timedelta(days=step)
        scaled_pred = forward(network, np.asarray(buffer[-window_len:]))
        out[step - 1] = feature_scaler.column_inverse(temp_idx, scaled_pred)
        buffer.append(_next_feature_row(feature_scaler, climatology, day, scaled_pred))
    return out


# --- report and bundle persistence ---------------------------------------------

def report_to_csv(report: ForecastReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for k in range(report.horizon):
            row = [report.dates[k].isoformat()]
            for name in REPORT_COLUMNS[1:]:
                value = float(getattr(report, name)[k])
                row.append("" if math.isnan(value) else repr(value))
            writer.writerow(row)


def report_from_csv(path) -> ForecastReport:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report header {header!r}")
        rows = list(reader)
    dates = tuple(dt.date.fromisoformat(r[0]) for r in rows)
    cols = {}
    for j, name in enumerate(REPORT_COLUMNS[1:], start=1):
        cols[name] = np.array([math.nan if r[j] == "" else float(r[j]) for r in rows])
    return ForecastReport(dates=dates, **cols)


def _scaler_doc(scaler: Scaler) -> dict:
    return {
        "columns": list(scaler.columns),
        "mins": [float(x) for x in scaler.mins],
        "maxs": [float(x) for x in scaler.maxs],
    }


def _scaler_from_doc(doc: dict) -> Scaler:
    return Scaler(tuple(doc["columns"]), np.array(doc["mins"]), np.array(doc["maxs"]))


def save_bundle(directory, model: HybridModel, temperature_lstm: LstmNetwork | None,
                config_echo: dict | None = None) -> None:
    """Persist a trained model as a directory of plain JSON/CSV artifacts."""
    import pathlib

    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sarima_mod.save_sarima(model.sarima, directory / "sarima.json")
    lstm_mod.save_network(model.lstm, directory / "lstm_residual.json")
    if temperature_lstm is not None:
        lstm_mod.save_network(temperature_lstm, directory / "lstm_temperature.json")
    with open(directory / "scalers.json", "w") as fh:
        json.dump(
            {"feature": _scaler_doc(model.feature_scaler), "residual": _scaler_doc(model.residual_scaler)},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    with open(directory / "climatology.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("day_of_year",) + EXOGENOUS_COLUMNS)
        for slot in range(DOY_SLOTS):
            writer.writerow([slot] + [repr(float(x)) for x in model.climatology[slot]])
    manifest = {
        "window": model.window,
        "direct_days": model.direct_days,
        "decay": model.decay,
        "decay_law": model.decay_law,
        "train_end_date": model.train_end_date.isoformat(),
        "n_train": int(len(model.sarima.training_series)),
        "has_temperature_lstm": temperature_lstm is not None,
        "config": config_echo or {},
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(directory, series: DailySeries) -> tuple[HybridModel, LstmNetwork | None]:
    """Reload a bundle; the preprocessed series supplies the training data."""
    import pathlib

    directory = pathlib.Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    n_train = manifest["n_train"]
    temperature_train = series.columns["temperature"][:n_train]
    sarima_model = sarima_mod.load_sarima(directory / "sarima.json", temperature_train)
    network = lstm_mod.load_network(directory / "lstm_residual.json")
    with open(directory / "scalers.json") as fh:
        scal = json.load(fh)
    with open(directory / "climatology.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        climatology = np.array([[float(x) for x in row[1:]] for row in reader])
    model = HybridModel(
        sarima=sarima_model,
        lstm=network,
        feature_scaler=_scaler_from_doc(scal["feature"]),
        residual_scaler=_scaler_from_doc(scal["residual"]),
        window=manifest["window"],
        direct_days=manifest["direct_days"],
        decay=manifest["decay"],
        decay_law=manifest["decay_law"],
        climatology=climatology,
        train_end_date=dt.date.fromisoformat(manifest["train_end_date"]),
    )
    temperature_lstm = None
    if manifest.get("has_temperature_lstm"):
        temperature_lstm = lstm_mod.load_network(directory / "lstm_temperature.json")
    return model, temperature_lstm
