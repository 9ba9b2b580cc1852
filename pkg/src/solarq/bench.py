"""Benchmark harness: run the five-model day-ahead experiment end to end,
persist stage artifacts, and emit the comparison table and interval plots."""
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fcann, lstm
from .dataio import (
    HOURS_PER_DAY,
    align_and_join,
    derive_night_mask,
    parse_power_csv,
    parse_timestamp,
    parse_weather_csv,
    power_to_csv,
    split_train_test,
)
from .errors import ConfigError, ScoringError
from .features import (
    FeatureSpec,
    SampleSet,
    build_samples,
    select_features_for_horizon,
)
from .linqr import family_to_json as poly_family_to_json
from .linqr import fit_poly_family, predict_poly_family
from .nnet import TrainConfig
from .qcore import (
    EvaluationReport,
    QuantileForecast,
    QuantileGrid,
    interval,
    percent_string,
    report_to_csv,
    score,
)

logger = logging.getLogger(__name__)

MODEL_ORDER = ("poly1", "poly2", "poly3", "fcann", "lstm")
DISPLAY_NAMES = {
    "poly1": "Poly1",
    "poly2": "Poly2",
    "poly3": "Poly3",
    "fcann": "FCANN",
    "lstm": "LSTM",
}
DEFAULT_INTERVAL_PAIRS = ((0.05, 0.95), (0.25, 0.75))


@dataclass
class BenchConfig:
    """Flat benchmark configuration, loadable from a key=value file."""

    power_csv: str = ""
    weather_csv: str = ""
    plant_id: int | None = None
    weather_zone_id: int | None = None
    train_fraction: float = 0.7
    models: tuple[str, ...] = MODEL_ORDER
    seed: int = 0
    score_night_hours: bool = True
    out_dir: str = "bench_out"
    interval_pairs: tuple[tuple[float, float], ...] = DEFAULT_INTERVAL_PAIRS
    workers: int = 1
    epochs: int = 200
    patience: int = 20
    learning_rate: float = 1e-3
    dropout_rate: float = 0.2
    all_sigmoid: bool = False
    clip_norm: float = 5.0

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("no models requested")
        unknown = [m for m in self.models if m not in MODEL_ORDER]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; choose from {list(MODEL_ORDER)}")
        if not self.power_csv or not self.weather_csv:
            raise ConfigError("power_csv and weather_csv are required")
        for path in (self.power_csv, self.weather_csv):
            if not Path(path).is_file():
                raise ConfigError(f"data file not found: {path}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be at least 1")
        for lo, hi in self.interval_pairs:
            if not 0.0 < lo < hi < 1.0:
                raise ConfigError(f"bad interval pair ({lo}, {hi})")

    def to_text(self) -> str:
        pairs = ";".join(f"{lo:g},{hi:g}" for lo, hi in self.interval_pairs)
        lines = [
            f"power_csv={self.power_csv}",
            f"weather_csv={self.weather_csv}",
            f"plant_id={'' if self.plant_id is None else self.plant_id}",
            f"weather_zone_id={'' if self.weather_zone_id is None else self.weather_zone_id}",
            f"train_fraction={self.train_fraction:g}",
            f"models={','.join(self.models)}",
            f"seed={self.seed}",
            f"score_night_hours={'true' if self.score_night_hours else 'false'}",
            f"out_dir={self.out_dir}",
            f"interval_pairs={pairs}",
            f"workers={self.workers}",
            f"epochs={self.epochs}",
            f"patience={self.patience}",
            f"learning_rate={self.learning_rate:g}",
            f"dropout_rate={self.dropout_rate:g}",
            f"all_sigmoid={'true' if self.all_sigmoid else 'false'}",
            f"clip_norm={self.clip_norm:g}",
        ]
        return "\n".join(lines) + "\n"


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v == "true":
        return True
    if v == "false":
        return False
    raise ConfigError(f"{key} must be 'true' or 'false', got {value!r}")


def _parse_models(value: str) -> tuple[str, ...]:
    models = tuple(m.strip().lower() for m in value.split(",") if m.strip())
    return models


def _parse_pairs(value: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for chunk in value.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"interval pair {chunk!r} must be 'lower,upper'")
        pairs.append((float(parts[0]), float(parts[1])))
    return tuple(pairs)


def _parse_optional_int(value: str, key: str) -> int | None:
    if value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


_CONFIG_PARSERS = {
    "power_csv": lambda v, k: v,
    "weather_csv": lambda v, k: v,
    "plant_id": _parse_optional_int,
    "weather_zone_id": _parse_optional_int,
    "train_fraction": lambda v, k: float(v),
    "models": lambda v, k: _parse_models(v),
    "seed": lambda v, k: int(v),
    "score_night_hours": _parse_bool,
    "out_dir": lambda v, k: v,
    "interval_pairs": lambda v, k: _parse_pairs(v),
    "workers": lambda v, k: int(v),
    "epochs": lambda v, k: int(v),
    "patience": lambda v, k: int(v),
    "learning_rate": lambda v, k: float(v),
    "dropout_rate": lambda v, k: float(v),
    "all_sigmoid": _parse_bool,
    "clip_norm": lambda v, k: float(v),
}


def config_from_text(text: str) -> BenchConfig:
    """Parse the flat key=value config format; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](value.strip(), key)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return BenchConfig(**values)


def config_from_file(path) -> BenchConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text())


@dataclass
class BenchReport:
    """Everything run() learned: per-model scores, data fingerprint, and
    wall-clock per stage."""

    models: dict[str, EvaluationReport]
    fingerprint: dict
    timings: dict[str, float]
    config: BenchConfig
    mean_interval_widths: dict[str, dict[str, float]] = field(default_factory=dict)


@contextmanager
def _stage(name: str, timings: dict):
    logger.info("stage %s ...", name)
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
        raise
    finally:
        timings[name] = time.perf_counter() - start
        logger.info("stage %s done in %.2fs", name, timings[name])


def forecasts_to_csv(forecasts: list[QuantileForecast], grid: QuantileGrid) -> str:
    header = ["day_index", "timestamp"] + [f"q{round(t * 100):02d}" for t in grid.levels]
    lines = [",".join(header)]
    for fc in forecasts:
        for h in range(HOURS_PER_DAY):
            cells = [str(fc.day_index), fc.timestamps[h].isoformat(timespec="minutes")]
            cells.extend(repr(float(v)) for v in fc.estimates[h])
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def forecasts_from_csv(text: str, grid: QuantileGrid) -> list[QuantileForecast]:
    lines = [line for line in text.splitlines() if line.strip()]
    expected_cols = 2 + len(grid)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != expected_cols:
            raise ScoringError(f"forecast CSV row {lineno}: expected {expected_cols} columns")
        rows.append(
            (int(cells[0]), parse_timestamp(cells[1], lineno),
             np.asarray([float(c) for c in cells[2:]]))
        )
    if len(rows) % HOURS_PER_DAY:
        raise ScoringError("forecast CSV does not contain whole days")
    forecasts = []
    for start in range(0, len(rows), HOURS_PER_DAY):
        block = rows[start: start + HOURS_PER_DAY]
        day = block[0][0]
        if any(r[0] != day for r in block):
            raise ScoringError(f"forecast CSV day block starting row {start + 2} is mixed")
        forecasts.append(
            QuantileForecast(
                day_index=day,
                timestamps=tuple(r[1] for r in block),
                estimates=np.vstack([r[2] for r in block]),
            )
        )
    return forecasts


def _selections_to_json(specs: list[FeatureSpec], feature_names) -> str:
    return json.dumps(
        [json.loads(spec.to_json(feature_names)) for spec in specs], indent=2
    )


def _fit_predict(
    key: str,
    config: BenchConfig,
    train_samples: SampleSet,
    test_samples: SampleSet,
    specs: list[FeatureSpec],
    mask,
    grid: QuantileGrid,
    out: Path,
):
    """Fit one family, persist its parameters, and forecast the test days."""
    if key.startswith("poly"):
        degree = int(key[-1])
        family = fit_poly_family(train_samples, specs, grid, degree)
        (out / "models" / f"{key}.json").write_text(
            poly_family_to_json(family, train_samples.feature_names)
        )
        return predict_poly_family(family, test_samples)
    if key == "fcann":
        tc = TrainConfig(
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            batch_size=32,
            dropout_rate=config.dropout_rate,
            early_stop_patience=config.patience,
            seed=config.seed,
        )
        family = fcann.fit_fcann_family(
            train_samples, specs, grid, tc, workers=config.workers
        )
        (out / "models" / "fcann.json").write_text(
            fcann.family_to_json(family, train_samples.feature_names)
        )
        return fcann.predict_fcann_family(family, test_samples)
    if key == "lstm":
        tc = TrainConfig(
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            batch_size=16,
            dropout_rate=config.dropout_rate,
            early_stop_patience=config.patience,
            seed=config.seed,
        )
        model = lstm.fit_lstm(
            train_samples, mask, grid, tc,
            clip_norm=config.clip_norm, all_sigmoid=config.all_sigmoid,
        )
        (out / "models" / "lstm.json").write_text(lstm.lstm_model_to_json(model))
        return lstm.predict_lstm(model, test_samples)
    raise ConfigError(f"unknown model {key!r}")


def run(config: BenchConfig) -> BenchReport:
    """Execute the full pipeline and write artifacts under config.out_dir.

    Stages: ingest, split, night mask, sample building, feature selection,
    then fit/predict/score per requested model.  Deterministic given the
    seed; any stage failure marks the artifact directory incomplete and
    re-raises with the stage name attached.
    """
    config.validate()
    out = Path(config.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "forecasts").mkdir(exist_ok=True)
    (out / "plots").mkdir(exist_ok=True)
    meta_path = out / "run_meta.json"
    meta_path.write_text(json.dumps({"complete": False}))

    timings: dict[str, float] = {}
    grid = QuantileGrid.default()
    try:
        with _stage("ingest", timings):
            with open(config.power_csv, newline="") as f:
                power = parse_power_csv(f, zone=config.plant_id)
            with open(config.weather_csv, newline="") as f:
                weather = parse_weather_csv(f, zone=config.weather_zone_id)
            data = align_and_join(power, weather)
            whole = data.slice(0, data.n_whole_days * HOURS_PER_DAY)

        with _stage("split", timings):
            train_data, test_data = split_train_test(whole, config.train_fraction)
            n_train_days = train_data.n_whole_days

        with _stage("night_mask", timings):
            mask = derive_night_mask(train_data)

        with _stage("samples", timings):
            samples = build_samples(whole, mask)
            train_samples, test_samples = samples.split_by_day(n_train_days)

        with _stage("selection", timings):
            specs = [
                select_features_for_horizon(train_samples, h, seed=config.seed)
                for h in range(HOURS_PER_DAY)
            ]
            (out / "selections.json").write_text(
                _selections_to_json(specs, samples.feature_names)
            )

        fingerprint = {
            "power_rows": len(power),
            "weather_rows": len(next(iter(weather.values()))),
            "aligned_hours": len(whole),
            "n_days": whole.n_whole_days,
            "date_range": [whole.timestamps[0].isoformat(), whole.timestamps[-1].isoformat()],
            "train_days": n_train_days,
            "test_days": test_data.n_whole_days,
            "split_boundary": test_data.timestamps[0].isoformat(),
            "night_hours": list(mask.sorted_hours),
            "train_sample_rows": len(train_samples),
            "test_sample_rows": len(test_samples),
        }
        (out / "fingerprint.json").write_text(json.dumps(fingerprint, indent=2))
        (out / "config_echo.txt").write_text(config.to_text())
        (out / "actuals_test.csv").write_text(power_to_csv(test_data.power))

        exclude = () if config.score_night_hours else mask.sorted_hours
        reports: dict[str, EvaluationReport] = {}
        widths: dict[str, dict[str, float]] = {}
        for key in MODEL_ORDER:
            if key not in config.models:
                continue
            display = DISPLAY_NAMES[key]
            with _stage(f"fit:{key}", timings):
                forecasts = _fit_predict(
                    key, config, train_samples, test_samples, specs, mask, grid, out
                )
            with _stage(f"score:{key}", timings):
                (out / "forecasts" / f"{key}.csv").write_text(
                    forecasts_to_csv(forecasts, grid)
                )
                reports[key] = score(
                    forecasts, test_data.power, grid, display, exclude_hours=exclude
                )
                (out / f"losses_{key}.csv").write_text(report_to_csv(reports[key]))
            with _stage(f"plots:{key}", timings):
                widths[key] = {}
                plot_days = range(min(3, len(forecasts)))
                for lo, hi in config.interval_pairs:
                    _, _, width = emit_interval_plot(
                        forecasts, test_data.power, (lo, hi), plot_days,
                        grid, display, out / "plots",
                    )
                    widths[key][f"{lo:g}-{hi:g}"] = width
            logger.info("%s scored: %s%%", display, percent_string(reports[key].avg_loss))

        report = BenchReport(
            models=reports,
            fingerprint=fingerprint,
            timings=timings,
            config=config,
            mean_interval_widths=widths,
        )
        table_text, table_csv = emit_table(report)
        (out / "report.txt").write_text(table_text)
        (out / "report.csv").write_text(table_csv)
        (out / "timings.json").write_text(json.dumps(timings, indent=2))
        meta_path.write_text(json.dumps({"complete": True}))
        return report
    except Exception as exc:
        meta_path.write_text(
            json.dumps({"complete": False, "failed_stage": getattr(exc, "stage", None)})
        )
        raise


def emit_table(report: BenchReport) -> tuple[str, str]:
    """Render the model comparison in the paper's table format.

    Returns (text, csv); models appear in the fixed order Poly1, Poly2,
    Poly3, FCANN, LSTM, losses in percent with two decimals.
    """
    text_lines = ["Model  Avg. Pinball-loss [%]"]
    csv_lines = ["model,avg_pinball_pct"]
    for key in MODEL_ORDER:
        if key not in report.models:
            continue
        rep = report.models[key]
        pct = percent_string(rep.avg_loss)
        text_lines.append(f"{DISPLAY_NAMES[key]:<6} {pct}")
        csv_lines.append(f"{DISPLAY_NAMES[key]},{pct}")
    return "\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n"


def emit_interval_plot(
    forecasts: list[QuantileForecast],
    actuals,
    pair: tuple[float, float],
    days,
    grid: QuantileGrid,
    model_name: str,
    out_dir,
) -> tuple[Path, Path, float]:
    """Write the interval-band CSV, SVG, and metadata for selected test days.

    ``days`` indexes into ``forecasts`` (0 = first test day).  Returns the
    CSV path, the SVG path, and the mean band width over the plotted hours.
    """
    lo, hi = pair
    days = list(days)
    if not days:
        raise ValueError("no days requested")
    for d in days:
        if not 0 <= d < len(forecasts):
            raise ValueError(
                f"requested day {d} outside test range 0..{len(forecasts) - 1}"
            )
    actual_by_ts = dict(zip(actuals.timestamps, np.asarray(actuals.values, dtype=float)))

    rows = []
    for d in days:
        fc = forecasts[d]
        band = interval(fc, lo, hi, grid)
        for h in range(HOURS_PER_DAY):
            ts = fc.timestamps[h]
            if ts not in actual_by_ts:
                raise ValueError(f"no actual value for forecast timestamp {ts.isoformat()}")
            rows.append((ts, actual_by_ts[ts], band.lower[h], band.upper[h]))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{model_name}_{lo:g}_{hi:g}"
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"

    lines = ["timestamp,actual,lower,upper"]
    for ts, act, lo_v, hi_v in rows:
        lines.append(
            f"{ts.isoformat(timespec='minutes')},"
            f"{float(act)!r},{float(lo_v)!r},{float(hi_v)!r}"
        )
    csv_path.write_text("\n".join(lines) + "\n")

    mean_width = float(np.mean([hi_v - lo_v for _, _, lo_v, hi_v in rows]))
    _render_band_svg(rows, model_name, (lo, hi), mean_width, svg_path)
    (out_dir / f"{stem}_meta.json").write_text(
        json.dumps(
            {
                "model": model_name,
                "lower_tau": lo,
                "upper_tau": hi,
                "nominal_coverage": hi - lo,
                "mean_width": mean_width,
                "days": [forecasts[d].day_index for d in days],
            },
            indent=2,
        )
    )
    return csv_path, svg_path, mean_width


def _render_band_svg(rows, model_name: str, pair, mean_width: float, svg_path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.arange(len(rows))
    actual = [r[1] for r in rows]
    lower = [r[2] for r in rows]
    upper = [r[3] for r in rows]
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.fill_between(
        x, lower, upper, alpha=0.35, color="tab:blue",
        label=f"{pair[0]:g}-{pair[1]:g} band",
    )
    ax.plot(x, actual, color="black", linewidth=1.2, label="actual")
    ax.set_xlabel("hour")
    ax.set_ylabel("normalized power")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{model_name} interval forecast (mean width {mean_width:.3f})")
    ax.legend(loc="upper right", fontsize=8)
    hours = len(rows)
    ticks = list(range(0, hours, HOURS_PER_DAY))
    ax.set_xticks(ticks)
    ax.set_xticklabels([rows[t][0].strftime("%m-%d") for t in ticks], fontsize=8)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
