"""Day-ahead probabilistic solar power forecasting: quantile regressions
(polynomial, FCANN, LSTM) trained on the pinball loss, plus a benchmark
harness over GEFCom14-format data."""

from .dataio import (
    NightMask,
    RawDataset,
    TimeSeries,
    align_and_join,
    derive_night_mask,
    parse_power_csv,
    parse_weather_csv,
    split_train_test,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    ParseError,
    ScoringError,
    SolarqError,
    SplitError,
    TrainingError,
    ValidationError,
)
from .features import (
    FeatureSpec,
    SampleSet,
    build_samples,
    forward_select,
    polynomial_expand,
    select_features_for_horizon,
)
from .qcore import (
    EvaluationReport,
    IntervalForecast,
    QuantileForecast,
    QuantileGrid,
    interval,
    pinball,
    repair_crossing,
    repair_forecast,
    score,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConfigError",
    "DataError",
    "EvaluationReport",
    "FeatureSpec",
    "IntervalForecast",
    "NightMask",
    "ParseError",
    "QuantileForecast",
    "QuantileGrid",
    "RawDataset",
    "SampleSet",
    "ScoringError",
    "SolarqError",
    "SplitError",
    "TimeSeries",
    "TrainingError",
    "ValidationError",
    "align_and_join",
    "build_samples",
    "derive_night_mask",
    "forward_select",
    "interval",
    "parse_power_csv",
    "parse_weather_csv",
    "pinball",
    "polynomial_expand",
    "repair_crossing",
    "repair_forecast",
    "score",
    "select_features_for_horizon",
    "split_train_test",
    "__version__",
]
