"""Exception types shared across the package."""


class PolicastError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(PolicastError, ValueError):
    """Array dimensions do not match what an operation requires."""


class DomainError(PolicastError, ValueError):
    """An input value lies outside an operation's domain (non-finite, negative, ...)."""


class RangeError(PolicastError, IndexError):
    """A day index falls outside the covered range."""


class IntegrationError(PolicastError, RuntimeError):
    """ODE integration diverged.

    Carries the day at which divergence was detected.
    """

    def __init__(self, message, day=None):
        super().__init__(message)
        self.day = day


class NumericalError(PolicastError, RuntimeError):
    """A linear-algebra routine failed after all recovery attempts.

    ``diagnostics`` holds condition-number information collected on failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(PolicastError, ValueError):
    """A data file violates its schema; names file, line and column."""

    def __init__(self, message, path=None, line=None, column=None):
        loc = f"{path}:{line}" + (f" (column {column})" if column is not None else "")
        super().__init__(f"{loc}: {message}" if path else message)
        self.path = path
        self.line = line
        self.column = column


class JoinError(PolicastError, ValueError):
    """Region ids in one feed have no match in another; lists the orphans."""

    def __init__(self, message, orphans=()):
        super().__init__(message)
        self.orphans = list(orphans)


class AlignmentError(PolicastError, ValueError):
    """Calendars of records that must share a date range do not line up."""


class TrainingError(PolicastError, RuntimeError):
    """Optimization produced non-finite quantities; names the first bad parameter."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class FitError(PolicastError, RuntimeError):
    """A baseline curve fit failed to converge after all restarts."""


class ForecastError(PolicastError, RuntimeError):
    """Too many Monte Carlo samples failed during forecasting."""


class InsufficientVariationError(PolicastError, ValueError):
    """A regression was requested on data with too few distinct x values."""


class ValidationError(PolicastError, ValueError):
    """A request failed structural validation; carries the full error list."""

    def __init__(self, errors):
        super().__init__("; ".join(e["message"] for e in errors))
        self.errors = errors
