"""Daily weather data acquisition and repair.

Pulls daily aggregates from the Open-Meteo archive API (or a local CSV with
the same schema), fills observation gaps, and first-differences the pressure
column so the level drift does not leak into downstream models.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np
import requests

ARCHIVE_URL = "https://archive-api.open-meteo.com/v1/archive"

VARIABLES = ("temperature", "dew_point", "pressure", "wind_speed", "visibility")

# column name -> CSV header
CSV_FIELDS = {
    "temperature": "temperature_c",
    "dew_point": "dew_point_c",
    "pressure": "pressure_hpa",
    "wind_speed": "wind_speed_kmh",
    "visibility": "visibility_km",
}
CSV_HEADER = ("date",) + tuple(CSV_FIELDS[v] for v in VARIABLES)

# Open-Meteo daily aggregate -> column name. Daily means throughout; the API
# aggregates hourly data server-side.
API_DAILY = {
    "temperature_2m_mean": "temperature",
    "dew_point_2m_mean": "dew_point",
    "surface_pressure_mean": "pressure",
    "wind_speed_10m_mean": "wind_speed",
    "visibility_mean": "visibility",
}


class IngestError(Exception):
    """Base class for data acquisition failures."""


class TransportError(IngestError):
    """Network-level failure; the request can be retried."""

    retryable = True


class RequestError(IngestError):
    """The API answered with an HTTP error status."""

    def __init__(self, status_code: int, detail: str = ""):
        self.status_code = status_code
        super().__init__(f"HTTP {status_code}: {detail}" if detail else f"HTTP {status_code}")


class ParseError(IngestError):
    """Response or file content does not match the expected schema."""


class UnrecoverableColumnError(IngestError):
    """A column has no observed value at all, so gaps cannot be filled."""


class InsufficientDataError(IngestError):
    """The series is too short for the requested transform."""


@dataclass(frozen=True)
class DailySeries:
    """Consecutive daily observations for one location.

    Columns are float arrays of equal length, aligned day by day starting at
    ``start_date``; NaN marks a missing observation. Instances are immutable
    (arrays are locked read-only) and safe to share across threads.
    """

    start_date: dt.date
    columns: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if set(self.columns) != set(VARIABLES):
            unknown = set(self.columns) ^ set(VARIABLES)
            raise ValueError(f"expected columns {VARIABLES}, mismatch on {sorted(unknown)}")
        lengths = {name: len(col) for name, col in self.columns.items()}
        if len(set(lengths.values())) != 1:
            raise ValueError(f"columns have unequal lengths: {lengths}")
        for name, col in list(self.columns.items()):
            arr = np.asarray(col, dtype=float)
            arr.flags.writeable = False
            self.columns[name] = arr

    @property
    def length(self) -> int:
        return len(self.columns["temperature"])

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=self.length - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(self.length)]

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def has_gaps(self) -> bool:
        return any(np.isnan(col).any() for col in self.columns.values())

    def replace_column(self, name: str, values: np.ndarray) -> "DailySeries":
        if len(values) != self.length:
            raise ValueError("replacement column length mismatch")
        cols = {k: (np.array(values, dtype=float) if k == name else v) for k, v in self.columns.items()}
        return DailySeries(self.start_date, cols)


def fetch_open_meteo(
    latitude: float,
    longitude: float,
    start: dt.date,
    end: dt.date,
    session: requests.Session | None = None,
    timeout: float = 30.0,
) -> DailySeries:
    """Fetch daily weather aggregates from the Open-Meteo archive.

    Returns one row per day in [start, end]; values the API reports as null
    come back as NaN and are repaired later by fill_gaps, never zeroed.
    """
    if not (-90.0 <= latitude <= 90.0):
        raise ValueError(f"latitude out of range: {latitude}")
    if not (-180.0 <= longitude <= 180.0):
        raise ValueError(f"longitude out of range: {longitude}")
    if start > end:
        raise ValueError(f"start {start} is after end {end}")

    params = {
        "latitude": latitude,
        "longitude": longitude,
        "start_date": start.isoformat(),
        "end_date": end.isoformat(),
        "daily": ",".join(API_DAILY),
        "timezone": "auto",
        "wind_speed_unit": "kmh",
    }
    own_session = session is None
    if own_session:
        session = requests.Session()
    try:
        try:
            response = session.get(ARCHIVE_URL, params=params, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"archive request failed: {exc}") from exc
        if response.status_code != 200:
            raise RequestError(response.status_code, response.text[:200])
        try:
            payload = response.json()
        except ValueError as exc:
            raise ParseError(f"response is not valid JSON: {exc}") from exc
    finally:
        if own_session:
            session.close()
    return _parse_archive_payload(payload, start, end)


def _parse_archive_payload(payload: dict, start: dt.date, end: dt.date) -> DailySeries:
    daily = payload.get("daily")
    if not isinstance(daily, dict):
        raise ParseError("response has no 'daily' block")
    times = daily.get("time")
    if not times:
        raise ParseError("response missing field 'time'")
    expected_days = (end - start).days + 1
    if len(times) != expected_days:
        raise ParseError(f"expected {expected_days} days, response has {len(times)}")
    try:
        parsed = [dt.date.fromisoformat(t) for t in times]
    except ValueError as exc:
        raise ParseError(f"unparseable date in response: {exc}") from exc
    if parsed[0] != start or any(
        (b - a).days != 1 for a, b in zip(parsed, parsed[1:])
    ):
        raise ParseError("response dates are not the consecutive requested range")

    columns = {}
    for api_name, col_name in API_DAILY.items():
        values = daily.get(api_name)
        if values is None:
            raise ParseError(f"response missing variable '{api_name}'")
        if len(values) != expected_days:
            raise ParseError(f"variable '{api_name}' has {len(values)} values, expected {expected_days}")
        arr = np.array([math.nan if v is None else float(v) for v in values])
        if col_name == "visibility":
            arr = arr / 1000.0  # API reports metres
        columns[col_name] = arr
    return DailySeries(start, columns)


def load_csv(path) -> DailySeries:
    """Load a DailySeries from the documented CSV schema.

    Empty cells map to NaN; dates must be consecutive with no duplicates.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(header) != CSV_HEADER:
            raise ParseError(f"{path}: header {header!r} does not match {list(CSV_HEADER)!r}")
        rows = list(reader)
    if not rows:
        raise ParseError(f"{path}: no data rows")

    dates = []
    columns = {name: [] for name in VARIABLES}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"{path}:{lineno}: expected {len(CSV_HEADER)} cells, got {len(row)}")
        try:
            dates.append(dt.date.fromisoformat(row[0]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad date {row[0]!r}") from exc
        for name, cell in zip(VARIABLES, row[1:]):
            if cell == "":
                columns[name].append(math.nan)
                continue
            try:
                columns[name].append(float(cell))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric {CSV_FIELDS[name]} cell {cell!r}") from exc

    for prev, cur in zip(dates, dates[1:]):
        gap = (cur - prev).days
        if gap == 0:
            raise ParseError(f"{path}: duplicated date {cur}")
        if gap != 1:
            raise ParseError(f"{path}: non-consecutive dates {prev} -> {cur}")
    return DailySeries(dates[0], {name: np.array(vals) for name, vals in columns.items()})


def write_csv(series: DailySeries, path) -> None:
    """Write a DailySeries in the documented CSV schema (NaN -> empty cell)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, day in enumerate(series.dates):
            row = [day.isoformat()]
            for name in VARIABLES:
                value = series.columns[name][i]
                row.append("" if math.isnan(value) else repr(float(value)))
            writer.writerow(row)


def fill_gaps(series: DailySeries) -> DailySeries:
    """Forward-fill each column, then backward-fill any leading missing run.

    Idempotent, and never changes a value that was already observed.
    """
    filled = {}
    for name in VARIABLES:
        col = np.array(series.columns[name])
        if np.isnan(col).all():
            raise UnrecoverableColumnError(f"column '{name}' has no observed values")
        last = math.nan
        for i in range(len(col)):
            if math.isnan(col[i]):
                col[i] = last
            else:
                last = col[i]
        # leading run: first observed value propagates backwards
        first_valid = np.flatnonzero(~np.isnan(col))[0]
        col[:first_valid] = col[first_valid]
        filled[name] = col
    return DailySeries(series.start_date, filled)


def difference_pressure(series: DailySeries) -> DailySeries:
    """Replace pressure with day-over-day first differences.

    The first element is set to 0 so every column keeps the same length.
    Run after fill_gaps; other columns pass through untouched.
    """
    if series.length < 2:
        raise InsufficientDataError("need at least 2 days to difference pressure")
    pressure = series.columns["pressure"]
    if np.isnan(pressure).any():
        raise ValueError("pressure column still has gaps; run fill_gaps first")
    delta = np.empty_like(pressure)
    delta[0] = 0.0
    delta[1:] = np.diff(pressure)
    return series.replace_column("pressure", delta)


def cache_filename(latitude: float, longitude: float, start: dt.date, end: dt.date) -> str:
    """Deterministic cache file name for one (location, range) fetch."""
    def fmt(x: float) -> str:
        return f"{x:+.4f}".replace("+", "p").replace("-", "m").replace(".", "_")

    return f"openmeteo_{fmt(latitude)}_{fmt(longitude)}_{start.isoformat()}_{end.isoformat()}.csv"
