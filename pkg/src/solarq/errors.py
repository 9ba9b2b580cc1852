"""Exception types shared across the package."""


class SolarqError(Exception):
    """Base class for all solarq errors."""


class ConfigError(SolarqError):
    """Invalid or inconsistent configuration."""


class DataError(SolarqError):
    """Problem with input data files or their contents."""


class ParseError(DataError):
    """Malformed cell, header, or timestamp in an input file."""


class ValidationError(DataError):
    """Parsed data violates a structural requirement (bounds, duplicates, gaps)."""


class AlignmentError(DataError):
    """Series have no common timestamp range."""


class SplitError(DataError):
    """Dataset cannot be split as requested."""


class ScoringError(SolarqError):
    """Forecasts and actuals do not line up for evaluation."""


class TrainingError(SolarqError):
    """Model fitting failed, diverged, or did not converge.

    ``best_objective`` carries the best objective reached before failure,
    ``epoch`` the epoch at which training broke down (where applicable).
    """

    def __init__(self, message, best_objective=None, epoch=None):
        super().__init__(message)
        self.best_objective = best_objective
        self.epoch = epoch
