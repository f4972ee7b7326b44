"""Exception hierarchy.

Everything raised on purpose derives from :class:`PointRingError`. The CLI
maps :class:`ConfigError` subclasses to exit code 2 and :class:`NumericalError`
subclasses to exit code 3.
"""


class PointRingError(Exception):
    pass


class NumericalError(PointRingError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class PoleError(DomainError):
    """Argument sits on a pole (nonpositive integer, or a Landau level)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CoincidenceError(DomainError):
    """Two points closer than the coincidence tolerance."""


class WindowError(NumericalError, ValueError):
    pass


class ScanResolutionError(NumericalError):
    pass


class NotARootError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class GridError(NumericalError):
    pass


class ContinuationError(NumericalError):
    pass


class ConfigError(PointRingError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class ValidationError(ConfigError, ValueError):
    def __init__(self, field, constraint):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")
