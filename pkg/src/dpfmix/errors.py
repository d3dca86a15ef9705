"""Exception types shared across the package.

The CLI maps each family onto a process exit code, so library code raises
the most specific class that applies.
"""


class DPFMixError(Exception):
    """Base class for all package errors."""


class DomainError(DPFMixError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(DPFMixError, ValueError):
    """A release or experiment configuration cannot be resolved."""


class IngestionError(DPFMixError):
    """A data file is missing, malformed, or inconsistent."""


class AccuracyError(DPFMixError, ArithmeticError):
    """A numerical routine could not reach its accuracy contract."""


class SingularSystemError(AccuracyError):
    """A least-squares system is too ill-conditioned to solve."""


class TrainingError(AccuracyError):
    """Training produced a non-finite loss."""
