"""Quantile-forecast primitives: the tau grid, pinball loss, scoring, crossing
repair, and interval construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal, ROUND_HALF_UP
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ScoringError

HOURS_PER_DAY = 24


def check_tau(tau: float) -> float:
    """Validate a quantile level, returning it as a plain float."""
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie strictly in (0, 1), got {tau}")
    return tau


@dataclass(frozen=True)
class QuantileGrid:
    """A strictly increasing sequence of quantile levels."""

    levels: tuple[float, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("quantile grid must not be empty")
        levels = tuple(check_tau(t) for t in self.levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("quantile levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def default(cls) -> "QuantileGrid":
        """The 99-level grid 0.01, 0.02, ..., 0.99."""
        return cls(tuple(i / 100.0 for i in range(1, 100)))

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def index_of(self, tau: float) -> int:
        """Position of ``tau`` in the grid; raises KeyError if absent."""
        arr = np.asarray(self.levels)
        i = int(np.argmin(np.abs(arr - tau)))
        if abs(arr[i] - tau) > 1e-9:
            raise KeyError(f"quantile level {tau} is not in the grid")
        return i

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)


@dataclass
class QuantileForecast:
    """One forecast day: a 24 x n_levels matrix of quantile estimates.

    ``estimates[h, j]`` is the estimate for hour ``h`` of the day at the
    j-th grid level.  Entries must already be clipped to [0, 1]; rows are
    expected to be run through :func:`repair_crossing` before interval
    construction or scoring.
    """

    day_index: int
    timestamps: tuple[datetime, ...]
    estimates: np.ndarray

    def __post_init__(self):
        est = np.asarray(self.estimates, dtype=float)
        if len(self.timestamps) != HOURS_PER_DAY:
            raise ValueError(
                f"a forecast day has {HOURS_PER_DAY} hours, got {len(self.timestamps)}"
            )
        if est.ndim != 2 or est.shape[0] != HOURS_PER_DAY:
            raise ValueError(f"estimates must be ({HOURS_PER_DAY}, n_levels), got {est.shape}")
        if not np.isfinite(est).all():
            raise ValueError("estimates contain non-finite values")
        if est.min() < 0.0 or est.max() > 1.0:
            raise ValueError("estimates must be clipped to [0, 1]")
        self.estimates = est
        self.timestamps = tuple(self.timestamps)

    @property
    def is_repaired(self) -> bool:
        return bool(np.all(np.diff(self.estimates, axis=1) >= 0.0))


@dataclass(frozen=True)
class IntervalForecast:
    """A central prediction band between two quantile levels."""

    lower_tau: float
    upper_tau: float
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError("interval lower bound exceeds upper bound")

    @property
    def nominal_coverage(self) -> float:
        return self.upper_tau - self.lower_tau

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower))


@dataclass
class EvaluationReport:
    """Per-level pinball losses and their average for one model."""

    model_name: str
    per_tau_losses: dict[float, float]
    avg_loss: float
    n_observations: int

    def __post_init__(self):
        if self.n_observations <= 0:
            raise ValueError("report requires at least one scored observation")
        mean = float(np.mean(list(self.per_tau_losses.values())))
        if not np.isclose(self.avg_loss, mean, rtol=0.0, atol=1e-12):
            raise ValueError("avg_loss must equal the mean of per_tau_losses")


def pinball(y_hat, y, tau: float):
    """Pinball loss of estimate ``y_hat`` against observation ``y`` at level ``tau``.

    Underestimation (y > y_hat) costs tau * (y - y_hat), otherwise the cost is
    (1 - tau) * (y_hat - y).  Accepts scalars or broadcasting arrays.
    """
    tau = check_tau(tau)
    d = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    loss = np.where(d > 0.0, tau * d, (tau - 1.0) * d)
    return float(loss) if loss.ndim == 0 else loss


def repair_crossing(row) -> np.ndarray:
    """Rearrange one hour's quantile estimates into non-decreasing order.

    Sorting preserves the multiset of values and removes quantile crossing.
    """
    row = np.asarray(row, dtype=float)
    if row.size == 0:
        raise ValueError("cannot repair an empty quantile row")
    return np.sort(row)


def repair_forecast(estimates: np.ndarray) -> np.ndarray:
    """Row-wise crossing repair for a (hours, levels) estimate matrix."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim != 2:
        raise ValueError("expected a 2-d (hours, levels) matrix")
    return np.sort(est, axis=1)


def interval(
    forecast: QuantileForecast, lower_tau: float, upper_tau: float, grid: QuantileGrid
) -> IntervalForecast:
    """Build the prediction band between two grid levels of a repaired forecast."""
    lower_tau = check_tau(lower_tau)
    upper_tau = check_tau(upper_tau)
    if lower_tau >= upper_tau:
        raise ValueError(f"interval requires lower_tau < upper_tau, got {lower_tau} >= {upper_tau}")
    lo = grid.index_of(lower_tau)
    hi = grid.index_of(upper_tau)
    if not forecast.is_repaired:
        raise ValueError("forecast must be crossing-repaired before interval construction")
    return IntervalForecast(
        lower_tau=lower_tau,
        upper_tau=upper_tau,
        lower=forecast.estimates[:, lo].copy(),
        upper=forecast.estimates[:, hi].copy(),
    )


def score(
    forecasts: Sequence[QuantileForecast],
    actuals,
    grid: QuantileGrid,
    model_name: str,
    exclude_hours: Iterable[int] = (),
) -> EvaluationReport:
    """Average pinball losses of a forecast collection against observed power.

    The forecasts must cover exactly the timestamps of ``actuals`` (an object
    with ``timestamps`` and ``values``).  Hour-of-day slots listed in
    ``exclude_hours`` are dropped from the loss on both sides, which is how
    night hours are removed when configured.
    """
    if not forecasts:
        raise ScoringError("no forecasts to score")
    actual_by_ts = dict(zip(actuals.timestamps, np.asarray(actuals.values, dtype=float)))

    seen: set[datetime] = set()
    for fc in forecasts:
        for ts in fc.timestamps:
            if ts in seen:
                raise ScoringError(f"duplicate forecast timestamp {ts.isoformat()}")
            seen.add(ts)

    missing = sorted(set(actual_by_ts) - seen)
    extra = sorted(seen - set(actual_by_ts))
    if missing or extra:
        parts = []
        if missing:
            shown = ", ".join(t.isoformat() for t in missing[:5])
            parts.append(f"{len(missing)} actual timestamps without forecasts (first: {shown})")
        if extra:
            shown = ", ".join(t.isoformat() for t in extra[:5])
            parts.append(f"{len(extra)} forecast timestamps without actuals (first: {shown})")
        raise ScoringError("forecast/actual coverage mismatch: " + "; ".join(parts))

    excluded = frozenset(int(h) for h in exclude_hours)
    n_levels = len(grid)
    taus = grid.as_array()

    est_blocks = []
    act_blocks = []
    for fc in forecasts:
        if fc.estimates.shape[1] != n_levels:
            raise ScoringError(
                f"forecast for day {fc.day_index} has {fc.estimates.shape[1]} levels, "
                f"grid has {n_levels}"
            )
        hours = [h for h in range(HOURS_PER_DAY) if h not in excluded]
        est_blocks.append(fc.estimates[hours, :])
        act_blocks.append([actual_by_ts[fc.timestamps[h]] for h in hours])

    est = np.concatenate(est_blocks, axis=0)
    act = np.concatenate(act_blocks, axis=0)
    if est.shape[0] == 0:
        raise ScoringError("all hours excluded from scoring")

    d = act[:, None] - est
    losses = np.where(d > 0.0, taus[None, :] * d, (taus[None, :] - 1.0) * d)
    per_tau = losses.mean(axis=0)
    return EvaluationReport(
        model_name=model_name,
        per_tau_losses={float(t): float(v) for t, v in zip(taus, per_tau)},
        avg_loss=float(per_tau.mean()),
        n_observations=int(est.shape[0]),
    )


def percent_string(loss: float) -> str:
    """Render a loss fraction in percent, 2 decimals, ties away from zero."""
    return str(Decimal(str(loss * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report_to_text(report: EvaluationReport) -> str:
    """Single-model table with the average loss in percent."""
    lines = ["Model  Avg. Pinball-loss [%]"]
    lines.append(f"{report.model_name:<6} {percent_string(report.avg_loss)}")
    return "\n".join(lines) + "\n"


def report_to_csv(report: EvaluationReport) -> str:
    """Per-level CSV (model, tau, loss) with a trailing summary row."""
    lines = ["model,tau,loss"]
    for tau in sorted(report.per_tau_losses):
        lines.append(f"{report.model_name},{tau:g},{report.per_tau_losses[tau]!r}")
    lines.append(f"{report.model_name},avg,{report.avg_loss!r}")
    return "\n".join(lines) + "\n"
