"""Synthetic GEFCom-style fixtures: a solar plant with a diurnal profile,
day-to-day cloud persistence, and three radiation forecast series that
actually predict the power.  Used by the pipeline and benchmark tests so
nothing here depends on the real competition files."""
from datetime import datetime, timedelta

import numpy as np

from solarq.dataio import align_and_join, parse_power_csv, parse_weather_csv

FIRST_LIGHT = 6
LAST_LIGHT = 18


def clear_sky(hour: int) -> float:
    if FIRST_LIGHT <= hour <= LAST_LIGHT:
        return float(np.sin(np.pi * (hour - FIRST_LIGHT) / (LAST_LIGHT - FIRST_LIGHT)))
    return 0.0


def make_arrays(n_days: int, seed: int = 0):
    """Hourly power in [0, 1] plus SSRD/STRD/TSR arrays of length n_days*24."""
    rng = np.random.default_rng(seed)
    hours = n_days * 24
    shape = np.array([clear_sky(h % 24) for h in range(hours)])

    # AR(1) cloudiness so the previous day's power is informative.
    cloud = np.empty(n_days)
    cloud[0] = 0.7
    for d in range(1, n_days):
        cloud[d] = np.clip(
            0.6 * cloud[d - 1] + 0.4 * rng.uniform(0.2, 1.0), 0.05, 1.0
        )
    cloud_h = np.repeat(cloud, 24)

    ssrd = shape * cloud_h * 3200.0 * (1.0 + 0.05 * rng.normal(size=hours))
    tsr = shape * 4100.0 * (1.0 + 0.01 * rng.normal(size=hours))
    strd = 900.0 + 350.0 * cloud_h + 30.0 * rng.normal(size=hours)

    power = 0.92 * shape * cloud_h * (1.0 + 0.06 * rng.normal(size=hours))
    power = np.clip(power, 0.0, 1.0)
    power[shape == 0.0] = 0.0
    return power, ssrd, strd, tsr


def timestamps(n_days: int, start: str = "2013-01-01T00:00"):
    t0 = datetime.fromisoformat(start)
    return [t0 + timedelta(hours=i) for i in range(n_days * 24)]


def power_csv(n_days: int, seed: int = 0, zone: int = 1, fmt: str = "iso") -> str:
    power, _, _, _ = make_arrays(n_days, seed)
    lines = ["ZONEID,TIMESTAMP,POWER"]
    for ts, value in zip(timestamps(n_days), power):
        stamp = ts.isoformat(timespec="minutes") if fmt == "iso" else ts.strftime("%Y%m%d %H:%M")
        lines.append(f"{zone},{stamp},{float(value)!r}")
    return "\n".join(lines) + "\n"


def weather_csv(n_days: int, seed: int = 0, zone: int = 1, fmt: str = "iso") -> str:
    _, ssrd, strd, tsr = make_arrays(n_days, seed)
    lines = ["ZONEID,TIMESTAMP,VAR169,VAR175,VAR178"]
    for i, ts in enumerate(timestamps(n_days)):
        stamp = ts.isoformat(timespec="minutes") if fmt == "iso" else ts.strftime("%Y%m%d %H:%M")
        lines.append(f"{zone},{stamp},{float(ssrd[i])!r},{float(strd[i])!r},{float(tsr[i])!r}")
    return "\n".join(lines) + "\n"


def raw_dataset(n_days: int, seed: int = 0):
    """Parsed and aligned RawDataset for in-memory tests."""
    power = parse_power_csv(power_csv(n_days, seed))
    weather = parse_weather_csv(weather_csv(n_days, seed))
    return align_and_join(power, weather)
