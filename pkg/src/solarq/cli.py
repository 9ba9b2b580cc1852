"""Command-line entry point for the benchmark harness.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import (
    DISPLAY_NAMES,
    MODEL_ORDER,
    config_from_file,
    emit_interval_plot,
    emit_table,
    forecasts_from_csv,
    run,
)
from .dataio import parse_power_csv
from .errors import ConfigError, DataError, ScoringError, TrainingError
from .qcore import QuantileGrid


def _parse_days(text: str) -> range:
    if ".." in text:
        start_s, _, stop_s = text.partition("..")
        start, stop = int(start_s), int(stop_s)
        if stop < start:
            raise ConfigError(f"bad day range {text!r}")
        return range(start, stop + 1)
    day = int(text)
    return range(day, day + 1)


def _parse_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"pair must be 'lower,upper', got {text!r}")
    return float(parts[0]), float(parts[1])


def _cmd_run(args) -> int:
    config = config_from_file(args.config)
    if args.models is not None:
        config.models = tuple(m.strip().lower() for m in args.models.split(",") if m.strip())
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.workers is not None:
        config.workers = args.workers
    report = run(config)
    table_text, _ = emit_table(report)
    print(table_text, end="")
    return 0


def _cmd_plot(args) -> int:
    out = Path(args.out)
    key = args.model.strip().lower()
    if key not in MODEL_ORDER:
        raise ConfigError(f"unknown model {args.model!r}; choose from {list(MODEL_ORDER)}")
    forecast_path = out / "forecasts" / f"{key}.csv"
    actuals_path = out / "actuals_test.csv"
    for path in (forecast_path, actuals_path):
        if not path.is_file():
            raise ConfigError(f"missing artifact {path}; run the benchmark first")
    grid = QuantileGrid.default()
    forecasts = forecasts_from_csv(forecast_path.read_text(), grid)
    with open(actuals_path, newline="") as f:
        actuals = parse_power_csv(f)
    days = _parse_days(args.days)
    pair = _parse_pair(args.pair)
    csv_path, svg_path, width = emit_interval_plot(
        forecasts, actuals, pair, days, grid, DISPLAY_NAMES[key], out / "plots"
    )
    print(f"wrote {csv_path} and {svg_path} (mean band width {width:.4f})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="solarq",
        description="Day-ahead probabilistic solar forecasting benchmark",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the benchmark end to end")
    run_p.add_argument("--config", required=True, help="key=value config file")
    run_p.add_argument("--models", help="comma-separated subset of "
                       + ",".join(MODEL_ORDER))
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--out", help="override the output directory")
    run_p.add_argument("--workers", type=int, help="parallel FCANN fit workers")

    plot_p = sub.add_parser("plot", help="interval plot from persisted forecasts")
    plot_p.add_argument("--out", required=True, help="benchmark output directory")
    plot_p.add_argument("--model", required=True)
    plot_p.add_argument("--days", default="0..2", help="test-day range, e.g. 0..2")
    plot_p.add_argument("--pair", default="0.05,0.95", help="interval pair, e.g. 0.05,0.95")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_plot(args)
    except ConfigError as exc:
        _print_error(exc)
        return 1
    except (DataError, ScoringError) as exc:
        _print_error(exc)
        return 2
    except TrainingError as exc:
        _print_error(exc)
        return 3


def _print_error(exc) -> None:
    stage = getattr(exc, "stage", None)
    prefix = f"error in stage {stage}" if stage else "error"
    print(f"{prefix}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
