"""Exception types shared across the package.

Every raised error carries a plain-language message naming the offending
column, row, or parameter; callers are expected to catch the base class.
"""
from __future__ import annotations


class MuscleBenchError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(MuscleBenchError):
    """Column set, column roles, or categorical labels are invalid."""


class ParseError(MuscleBenchError):
    """A data file is malformed; the message includes the line number."""


class ConfigError(MuscleBenchError, ValueError):
    """A configuration value is out of range or inconsistent."""


class SplitError(MuscleBenchError):
    """A requested train/test or CV split cannot be honored."""


class NumericError(MuscleBenchError):
    """A numerical routine left its supported regime (singular matrix, non-PD input)."""


class ProtocolError(MuscleBenchError):
    """The evaluation protocol was violated (e.g. screening without Sham rows)."""


class FitError(MuscleBenchError):
    """An estimator cannot be fitted on the provided data."""


class PredictionError(MuscleBenchError):
    """Prediction was requested for inputs the fitted model cannot handle."""


class DomainError(MuscleBenchError, ValueError):
    """An input value lies outside the mathematical domain of a transform."""
