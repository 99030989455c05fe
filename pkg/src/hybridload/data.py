"""Hourly load series: ingestion, scaling, sliding windows and a synthetic generator."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HOUR = dt.timedelta(hours=1)
MAX_GAP_HOURS = 3


class IngestionError(ValueError):
    """Raised for malformed or unrepairable load data."""


@dataclass(frozen=True, eq=False)
class LoadSeries:
    """Gap-free hourly loads in MW starting at midnight, whole days only."""

    start: dt.datetime
    values: np.ndarray
    holidays: frozenset[dt.date] = frozenset()
    interpolated: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "holidays", frozenset(self.holidays))
        if values.ndim != 1:
            raise IngestionError("values must be one-dimensional")
        if self.start.minute or self.start.second or self.start.microsecond or self.start.hour:
            raise IngestionError(f"series must start at 00:00, got {self.start.isoformat()}")
        if len(values) % 24:
            raise IngestionError(f"length {len(values)} is not a whole number of days")
        if not np.isfinite(values).all():
            raise IngestionError("non-finite load value")
        if (values < 0).any():
            raise IngestionError("negative load value")

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoadSeries):
            return NotImplemented
        return (
            self.start == other.start
            and self.holidays == other.holidays
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None

    def timestamp(self, index: int) -> dt.datetime:
        return self.start + index * HOUR

    def index_of(self, when: dt.datetime | dt.date) -> int:
        if not isinstance(when, dt.datetime):
            when = dt.datetime.combine(when, dt.time())
        delta = when - self.start
        return int(delta // HOUR)

    @property
    def n_days(self) -> int:
        return len(self.values) // 24

    def day(self, k: int) -> dt.date:
        return (self.start + dt.timedelta(days=k)).date()

    def is_holiday(self, day: dt.date) -> bool:
        return day in self.holidays

    def slice(self, start: int, stop: int) -> "LoadSeries":
        """Sub-series over hour indices ``[start, stop)``; both must be day-aligned."""
        return LoadSeries(self.timestamp(start), self.values[start:stop], self.holidays)


# --------------------------------------------------------------------------
# ingestion


def _parse_hour(text: str, lineno: int) -> dt.datetime:
    try:
        ts = dt.datetime.fromisoformat(text.strip())
    except ValueError:
        raise IngestionError(f"line {lineno}: bad timestamp {text!r}") from None
    if ts.tzinfo is not None:
        raise IngestionError(f"line {lineno}: timezone-aware timestamp {text!r}")
    if ts.minute or ts.second or ts.microsecond:
        raise IngestionError(f"line {lineno}: timestamp {text!r} is not on the hour")
    return ts


def load_holidays(path: str | Path) -> frozenset[dt.date]:
    days = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                days.add(dt.date.fromisoformat(line))
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad holiday date {line!r}") from None
    return frozenset(days)


def load_csv(path: str | Path, holiday_path: str | Path | None = None) -> LoadSeries:
    """Read a ``timestamp,load_mw`` CSV into a validated :class:`LoadSeries`.

    Runs of up to three missing hours are filled by linear interpolation;
    longer gaps, duplicates, non-finite or negative loads raise
    :class:`IngestionError`. Partial days at either end are trimmed.
    """
    stamps: list[dt.datetime] = []
    loads: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "load_mw"]:
            raise IngestionError(f"{path}: expected header 'timestamp,load_mw', got {header}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestionError(f"line {lineno}: expected 2 fields, got {len(row)}")
            ts = _parse_hour(row[0], lineno)
            try:
                load = float(row[1])
            except ValueError:
                raise IngestionError(f"line {lineno}: bad load value {row[1]!r}") from None
            if not math.isfinite(load):
                raise IngestionError(f"line {lineno}: non-finite load at {ts.isoformat()}")
            if load < 0:
                raise IngestionError(f"line {lineno}: negative load at {ts.isoformat()}")
            if stamps:
                if ts == stamps[-1]:
                    raise IngestionError(f"duplicate timestamp {ts.isoformat()}")
                if ts < stamps[-1]:
                    raise IngestionError(f"timestamps not increasing at {ts.isoformat()}")
            stamps.append(ts)
            loads.append(load)
    if not stamps:
        raise IngestionError(f"{path}: no data rows")

    holidays = load_holidays(holiday_path) if holiday_path else frozenset()

    # hours missing before the first row of day one count as a gap; a short
    # one cannot be interpolated (no left neighbour) so that day is dropped
    lead = stamps[0].hour
    if lead > MAX_GAP_HOURS:
        midnight = stamps[0].replace(hour=0)
        raise IngestionError(
            f"gap of {lead} hours starting at {midnight.isoformat()} exceeds {MAX_GAP_HOURS}"
        )
    if lead:
        first = next((k for k, ts in enumerate(stamps) if ts.hour == 0), None)
        if first is None:
            raise IngestionError(f"{path}: no 00:00 row, cannot align to whole days")
        stamps, loads = stamps[first:], loads[first:]

    start = stamps[0]
    filled: list[float] = [loads[0]]
    n_interp = 0
    for k in range(1, len(stamps)):
        missing = (stamps[k] - stamps[k - 1]) // HOUR - 1
        if missing > MAX_GAP_HOURS:
            bad = stamps[k - 1] + HOUR
            raise IngestionError(
                f"gap of {missing} hours starting at {bad.isoformat()} exceeds {MAX_GAP_HOURS}"
            )
        for m in range(1, missing + 1):
            frac = m / (missing + 1)
            filled.append(loads[k - 1] + frac * (loads[k] - loads[k - 1]))
        n_interp += missing
        filled.append(loads[k])

    whole = len(filled) // 24 * 24
    if whole == 0:
        raise IngestionError(f"{path}: fewer than 24 hours of data after alignment")
    return LoadSeries(start, np.array(filled[:whole]), holidays, n_interp)


def export_csv(series: LoadSeries, path: str | Path, holiday_path: str | Path | None = None) -> None:
    """Write the series in the ingestion format; floats use ``repr`` so re-reading is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,load_mw\n")
        for k, v in enumerate(series.values):
            fh.write(f"{series.timestamp(k).strftime('%Y-%m-%dT%H:00')},{float(v)!r}\n")
    if holiday_path is not None:
        with open(holiday_path, "w", encoding="utf-8") as fh:
            for day in sorted(series.holidays):
                fh.write(day.isoformat() + "\n")


# --------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class Scaler:
    """Min-max normalisation fitted on training data only."""

    min_value: float
    max_value: float

    def __post_init__(self):
        if not self.max_value > self.min_value:
            raise ValueError(f"degenerate scaler: max {self.max_value} <= min {self.min_value}")

    @property
    def span(self) -> float:
        return self.max_value - self.min_value

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min_value) / self.span

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.span + self.min_value


def fit_scaler(series: LoadSeries | np.ndarray, training_range: range | slice | None = None) -> Scaler:
    values = series.values if isinstance(series, LoadSeries) else np.asarray(series, dtype=np.float64)
    if training_range is not None:
        if isinstance(training_range, range):
            training_range = slice(training_range.start, training_range.stop)
        values = values[training_range]
    if values.size == 0:
        raise ValueError("empty training range")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise ValueError(f"constant series ({lo}); cannot min-max scale")
    return Scaler(lo, hi)


# --------------------------------------------------------------------------
# windows


@dataclass(frozen=True, eq=False)
class RawWindow:
    """One history/target pair; ``index`` is 1-based as in the window numbering."""

    index: int
    history: np.ndarray
    target: np.ndarray
    target_start: dt.datetime
    history_start: dt.datetime


def window_count(n: int, width: int = 168, stride: int = 24, horizon: int = 24) -> int:
    if n < width + horizon:
        return 0
    return (n - width - horizon) // stride + 1


def make_windows(
    series: LoadSeries, width: int = 168, stride: int = 24, horizon: int = 24
) -> list[RawWindow]:
    n = len(series)
    if n < width + horizon:
        raise ValueError(
            f"series of {n} hours is too short: need at least {width + horizon} (width + horizon)"
        )
    out = []
    vals = series.values
    for i in range(window_count(n, width, stride, horizon)):
        lo = stride * i
        out.append(
            RawWindow(
                index=i + 1,
                history=vals[lo : lo + width],
                target=vals[lo + width : lo + width + horizon],
                target_start=series.timestamp(lo + width),
                history_start=series.timestamp(lo),
            )
        )
    return out


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic load generator.

    ``level_shift`` is ``(date, MW)``: the offset is added from 00:00 of that
    date onward.
    """

    years: int = 3
    start: dt.date = dt.date(2019, 1, 1)
    base_load: float = 10000.0
    daily_amplitude: float = 1500.0
    weekly_amplitude: float = 800.0
    trend_slope: float = 200.0
    holiday_dip_fraction: float = 0.15
    noise_std_fraction: float = 0.02
    level_shift: tuple[dt.date, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.years < 1:
            raise ValueError("years must be at least 1")
        if self.base_load <= 0:
            raise ValueError("base_load must be positive")
        for name in ("daily_amplitude", "weekly_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.holiday_dip_fraction < 1:
            raise ValueError("holiday_dip_fraction must lie in [0, 1)")
        if not 0 <= self.noise_std_fraction < 0.2:
            raise ValueError("noise_std_fraction must lie in [0, 0.2)")


# fixed-date holidays plus an Easter-Monday-like spring day, per calendar year
_HOLIDAY_MONTH_DAYS = ((1, 1), (4, 22), (5, 1), (8, 15), (11, 1), (12, 25), (12, 26))
_WEEKLY_PROFILE = np.array([0.6, 1.0, 1.0, 1.0, 0.8, -1.2, -2.0])


def synth_holidays(config: SynthConfig) -> frozenset[dt.date]:
    years = range(config.start.year, config.start.year + config.years + 1)
    return frozenset(dt.date(y, m, d) for y in years for m, d in _HOLIDAY_MONTH_DAYS)


def synth_end(config: SynthConfig) -> dt.date:
    """First day after the generated span (same month/day, ``years`` later)."""
    try:
        return config.start.replace(year=config.start.year + config.years)
    except ValueError:  # 29 February start
        return config.start.replace(year=config.start.year + config.years, day=28)


def synth_signal(config: SynthConfig) -> LoadSeries:
    """The noise-free component of :func:`synth_generate`."""
    return _generate(config, noise=False)


def synth_generate(config: SynthConfig) -> LoadSeries:
    return _generate(config, noise=True)


def _generate(config: SynthConfig, noise: bool) -> LoadSeries:
    n_days = (synth_end(config) - config.start).days
    n = 24 * n_days
    t = np.arange(n, dtype=np.float64)
    hour = t % 24
    day_idx = np.arange(n) // 24
    start_wd = config.start.weekday()
    weekday = (start_wd + day_idx) % 7

    # peaks at 09:00
    daily = np.sin(2.0 * np.pi * (hour - 3.0) / 24.0)
    load = (
        config.base_load
        + config.daily_amplitude * daily
        + config.weekly_amplitude * _WEEKLY_PROFILE[weekday]
        + config.trend_slope * t / 8760.0
    )
    if config.level_shift is not None:
        shift_day, shift_mw = config.level_shift
        first = (shift_day - config.start).days * 24
        load[max(first, 0) :] += shift_mw

    holidays = synth_holidays(config)
    dates = [config.start + dt.timedelta(days=int(k)) for k in range(n_days)]
    is_hol = np.array([d in holidays for d in dates])
    load[np.repeat(is_hol, 24)] *= 1.0 - config.holiday_dip_fraction

    if noise and config.noise_std_fraction > 0:
        rng = np.random.default_rng(config.seed)
        load = load + rng.normal(0.0, config.noise_std_fraction * config.base_load, size=n)
    np.maximum(load, 0.0, out=load)
    start = dt.datetime.combine(config.start, dt.time())
    kept = frozenset(d for d in holidays if config.start <= d < synth_end(config))
    return LoadSeries(start, load, kept)
