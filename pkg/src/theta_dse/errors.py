"""Exception types shared across the package."""


class ThetaDseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThetaDseError, ValueError):
    """Invalid shapes, architectures, documents or option combinations."""


class UsageError(ThetaDseError, RuntimeError):
    """An API was called in a state it does not support."""


class NumericFailure(ThetaDseError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ParseError(ConfigurationError):
    """A structured document violates its schema."""


class EvaluatorProcessError(ThetaDseError, RuntimeError):
    """An external evaluator process died; the run cannot continue."""
