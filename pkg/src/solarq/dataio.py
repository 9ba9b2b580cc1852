"""Ingestion of GEFCom14-format power and weather CSVs.

Parses the two file kinds, aligns them onto a common hourly range, performs
the chronological train/test split on whole-day boundaries, and derives the
night-hour mask from training power.

Timestamps are treated as opaque, ordered hourly labels: a "day" is a block
of 24 consecutive hours counted from the first timestamp of a dataset, and an
"hour of day" is the offset within such a block.  No timezone handling is
applied.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import AlignmentError, ConfigError, ParseError, SplitError, ValidationError

HOURS_PER_DAY = 24
HOUR = timedelta(hours=1)

EXOGENOUS_VARIABLES = ("SSRD", "STRD", "TSR")

#: Default weather-column mapping (surface solar radiation down, surface
#: thermal radiation down, top net solar radiation).
DEFAULT_VARIABLE_MAP = {"VAR169": "SSRD", "VAR175": "STRD", "VAR178": "TSR"}

#: Hour-of-day slots whose maximum training power falls below this threshold
#: are treated as night.
NIGHT_EPSILON = 1e-6


def _check_hourly_grid(timestamps: tuple[datetime, ...], label: str) -> None:
    prev = None
    for ts in timestamps:
        if prev is not None:
            if ts == prev:
                raise ValidationError(f"{label}: duplicate timestamp {ts.isoformat()}")
            if ts < prev:
                raise ValidationError(f"{label}: timestamps not sorted at {ts.isoformat()}")
            if ts - prev != HOUR:
                missing = prev + HOUR
                raise ValidationError(
                    f"{label}: gap in hourly grid, missing hour {missing.isoformat()}"
                )
        prev = ts


@dataclass(eq=False)
class TimeSeries:
    """Hourly normalized power observations on a contiguous timestamp grid."""

    timestamps: tuple[datetime, ...]
    values: np.ndarray

    def __post_init__(self):
        self.timestamps = tuple(self.timestamps)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValidationError("power values must form a 1-d sequence")
        if len(vals) != len(self.timestamps):
            raise ValidationError("timestamps and values differ in length")
        if len(vals) == 0:
            raise ValidationError("empty time series")
        if not np.isfinite(vals).all():
            raise ValidationError("power values contain non-finite entries")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValidationError("power values must lie in [0, 1]")
        _check_hourly_grid(self.timestamps, "power series")
        self.values = vals

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.timestamps == other.timestamps and np.array_equal(self.values, other.values)

    @property
    def n_whole_days(self) -> int:
        return len(self) // HOURS_PER_DAY

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.timestamps[start:stop], self.values[start:stop].copy())


@dataclass(eq=False)
class ExogenousSeries:
    """One hourly weather-forecast series in the units of the source file."""

    variable_name: str
    timestamps: tuple[datetime, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.variable_name not in EXOGENOUS_VARIABLES:
            raise ValidationError(
                f"unknown exogenous variable {self.variable_name!r}; "
                f"expected one of {EXOGENOUS_VARIABLES}"
            )
        self.timestamps = tuple(self.timestamps)
        vals = np.asarray(self.values, dtype=float)
        if len(vals) != len(self.timestamps) or len(vals) == 0:
            raise ValidationError(f"{self.variable_name}: bad series length")
        if not np.isfinite(vals).all():
            raise ValidationError(f"{self.variable_name}: non-finite values")
        _check_hourly_grid(self.timestamps, self.variable_name)
        self.values = vals

    def __len__(self) -> int:
        return len(self.values)

    def slice(self, start: int, stop: int) -> "ExogenousSeries":
        return ExogenousSeries(
            self.variable_name, self.timestamps[start:stop], self.values[start:stop].copy()
        )


@dataclass(eq=False)
class RawDataset:
    """Power plus the three radiation series on one shared hourly grid."""

    power: TimeSeries
    exogenous: dict[str, ExogenousSeries]

    def __post_init__(self):
        missing = [v for v in EXOGENOUS_VARIABLES if v not in self.exogenous]
        if missing:
            raise ValidationError(f"dataset is missing exogenous series: {missing}")
        for series in self.exogenous.values():
            if series.timestamps != self.power.timestamps:
                raise ValidationError(
                    f"{series.variable_name} timestamps do not match the power series"
                )

    @property
    def timestamps(self) -> tuple[datetime, ...]:
        return self.power.timestamps

    @property
    def aligned_range(self) -> tuple[datetime, datetime]:
        return (self.power.timestamps[0], self.power.timestamps[-1])

    def __len__(self) -> int:
        return len(self.power)

    @property
    def n_whole_days(self) -> int:
        return len(self) // HOURS_PER_DAY

    def slice(self, start: int, stop: int) -> "RawDataset":
        return RawDataset(
            power=self.power.slice(start, stop),
            exogenous={k: s.slice(start, stop) for k, s in self.exogenous.items()},
        )

    def day_matrix(self, name: str = "power") -> np.ndarray:
        """Whole days of one series as an (n_days, 24) matrix; the trailing
        partial day, if any, is dropped."""
        values = self.power.values if name == "power" else self.exogenous[name].values
        n = self.n_whole_days * HOURS_PER_DAY
        return values[:n].reshape(self.n_whole_days, HOURS_PER_DAY)


@dataclass(frozen=True)
class NightMask:
    """Hour-of-day slots with structurally zero generation in training data."""

    night_hours: frozenset[int]
    epsilon: float = NIGHT_EPSILON

    def __post_init__(self):
        bad = [h for h in self.night_hours if not 0 <= h < HOURS_PER_DAY]
        if bad:
            raise ValidationError(f"night hours out of range: {bad}")

    def is_night(self, hour: int) -> bool:
        return hour in self.night_hours

    @property
    def sorted_hours(self) -> tuple[int, ...]:
        return tuple(sorted(self.night_hours))


def parse_timestamp(text: str, row: int) -> datetime:
    """Parse one timestamp cell, accepting ISO-8601 or compact ``YYYYMMDD HH:MM``."""
    s = text.strip()
    try:
        if "-" in s:
            return datetime.fromisoformat(s)
        return datetime.strptime(s, "%Y%m%d %H:%M")
    except ValueError as exc:
        raise ParseError(f"row {row}: cannot parse timestamp {text!r}") from exc


def _reader(stream) -> csv.DictReader:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return csv.DictReader(stream)


def _require_columns(reader: csv.DictReader, required, what: str) -> None:
    fields = reader.fieldnames or []
    missing = [c for c in required if c not in fields]
    if missing:
        raise ParseError(f"{what}: missing required columns {missing}")


def parse_power_csv(stream, zone: int | None = None) -> TimeSeries:
    """Parse a power CSV with columns ZONEID, TIMESTAMP, POWER.

    ``zone`` restricts parsing to one plant; with ``zone=None`` the file must
    contain a single zone.  Rows are sorted by timestamp; duplicates, gaps,
    and out-of-range power raise errors naming the offending row or hour.
    """
    reader = _reader(stream)
    _require_columns(reader, ("ZONEID", "TIMESTAMP", "POWER"), "power file")

    rows: list[tuple[datetime, float]] = []
    zones_seen: set[int] = set()
    for i, rec in enumerate(reader, start=1):
        try:
            rec_zone = int(rec["ZONEID"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"row {i}: bad ZONEID {rec.get('ZONEID')!r}") from exc
        if zone is not None and rec_zone != zone:
            continue
        zones_seen.add(rec_zone)
        ts = parse_timestamp(rec["TIMESTAMP"], i)
        try:
            power = float(rec["POWER"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"row {i}: bad POWER value {rec.get('POWER')!r}") from exc
        if not math.isfinite(power):
            raise ParseError(f"row {i}: non-finite POWER value")
        if not 0.0 <= power <= 1.0:
            raise ValidationError(f"row {i}: power {power} outside [0, 1]")
        rows.append((ts, power))

    if not rows:
        raise ValidationError(
            "power file has no rows" + (f" for zone {zone}" if zone is not None else "")
        )
    if zone is None and len(zones_seen) > 1:
        raise ValidationError(
            f"power file contains multiple zones {sorted(zones_seen)}; pass an explicit zone"
        )
    rows.sort(key=lambda r: r[0])
    timestamps = tuple(ts for ts, _ in rows)
    values = np.array([v for _, v in rows], dtype=float)
    return TimeSeries(timestamps, values)


def parse_weather_csv(
    stream,
    variable_map: dict[str, str] | None = None,
    zone: int | None = None,
) -> dict[str, ExogenousSeries]:
    """Parse a weather CSV into the three radiation series.

    ``variable_map`` maps column names to variable names (default
    ``DEFAULT_VARIABLE_MAP``); every one of SSRD, STRD, TSR must be covered.
    """
    if variable_map is None:
        variable_map = dict(DEFAULT_VARIABLE_MAP)
    mapped = set(variable_map.values())
    missing_vars = [v for v in EXOGENOUS_VARIABLES if v not in mapped]
    if missing_vars:
        raise ConfigError(f"variable_map does not cover required variables: {missing_vars}")
    columns = {col: var for col, var in variable_map.items() if var in EXOGENOUS_VARIABLES}

    reader = _reader(stream)
    _require_columns(reader, ("ZONEID", "TIMESTAMP", *columns), "weather file")

    rows: list[tuple[datetime, dict[str, float]]] = []
    zones_seen: set[int] = set()
    for i, rec in enumerate(reader, start=1):
        try:
            rec_zone = int(rec["ZONEID"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"row {i}: bad ZONEID {rec.get('ZONEID')!r}") from exc
        if zone is not None and rec_zone != zone:
            continue
        zones_seen.add(rec_zone)
        ts = parse_timestamp(rec["TIMESTAMP"], i)
        cells = {}
        for col, var in columns.items():
            try:
                cells[var] = float(rec[col])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"row {i}: bad value {rec.get(col)!r} in column {col}") from exc
        rows.append((ts, cells))

    if not rows:
        raise ValidationError(
            "weather file has no rows" + (f" for zone {zone}" if zone is not None else "")
        )
    if zone is None and len(zones_seen) > 1:
        raise ValidationError(
            f"weather file contains multiple zones {sorted(zones_seen)}; pass an explicit zone"
        )
    rows.sort(key=lambda r: r[0])
    timestamps = tuple(ts for ts, _ in rows)
    series = {}
    for var in EXOGENOUS_VARIABLES:
        values = np.array([cells[var] for _, cells in rows], dtype=float)
        series[var] = ExogenousSeries(var, timestamps, values)
    return series


def power_to_csv(ts: TimeSeries, zone: int = 1) -> str:
    """Serialize a power series back to CSV (ISO timestamps, full precision)."""
    lines = ["ZONEID,TIMESTAMP,POWER"]
    for stamp, value in zip(ts.timestamps, ts.values):
        lines.append(f"{zone},{stamp.isoformat(timespec='minutes')},{float(value)!r}")
    return "\n".join(lines) + "\n"


def align_and_join(power: TimeSeries, exogenous: dict[str, ExogenousSeries]) -> RawDataset:
    """Join power and weather onto the intersection of their timestamp ranges."""
    missing = [v for v in EXOGENOUS_VARIABLES if v not in exogenous]
    if missing:
        raise ValidationError(f"missing exogenous series: {missing}")
    start = max([power.timestamps[0]] + [s.timestamps[0] for s in exogenous.values()])
    stop = min([power.timestamps[-1]] + [s.timestamps[-1] for s in exogenous.values()])
    if start > stop:
        raise AlignmentError(
            f"series do not overlap: common range would start {start.isoformat()} "
            f"after it ends {stop.isoformat()}"
        )

    def window(series):
        i0 = series.timestamps.index(start)
        i1 = series.timestamps.index(stop)
        return series.slice(i0, i1 + 1)

    return RawDataset(
        power=window(power),
        exogenous={k: window(s) for k, s in exogenous.items()},
    )


def split_train_test(data: RawDataset, train_fraction: float) -> tuple[RawDataset, RawDataset]:
    """Chronological split on whole-day boundaries.

    The first part holds ``floor(train_fraction * whole_days)`` days; the
    second part holds the remainder, including any trailing partial day, so
    the two parts concatenate back to the input exactly.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie strictly in (0, 1), got {train_fraction}")
    days = data.n_whole_days
    if days < 2:
        raise SplitError(f"need at least 2 whole days to split, have {days}")
    # +1e-9 guards against 0.7 * 10 evaluating just below 7.0 in floats.
    n_train = int(math.floor(train_fraction * days + 1e-9))
    if n_train < 1 or n_train >= days:
        raise SplitError(
            f"train_fraction {train_fraction} leaves an empty partition for {days} days"
        )
    cut = n_train * HOURS_PER_DAY
    return data.slice(0, cut), data.slice(cut, len(data))


def derive_night_mask(train: RawDataset, epsilon_night: float = NIGHT_EPSILON) -> NightMask:
    """Hour-of-day slots whose maximum training power stays below the threshold."""
    values = train.power.values
    if len(values) < HOURS_PER_DAY:
        raise ValidationError("need at least one whole training day for the night mask")
    slots = np.arange(len(values)) % HOURS_PER_DAY
    night = frozenset(
        int(h) for h in range(HOURS_PER_DAY) if values[slots == h].max() < epsilon_night
    )
    return NightMask(night_hours=night, epsilon=epsilon_night)
