"""Exception hierarchy used across the package.

Everything derives from :class:`DynslError` so callers can catch broadly;
the subclasses distinguish bad inputs, unsatisfiable estimation problems,
and optimizer failures.
"""


class DynslError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(DynslError, ValueError):
    """A required column or config field is missing or malformed."""


class ParseError(DynslError, ValueError):
    """A file cell could not be parsed; message carries the row number."""


class ReferentialError(DynslError, ValueError):
    """Records reference subjects or times that violate dataset integrity."""


class DomainError(DynslError, ValueError):
    """An argument is outside the operation's domain."""


class ConfigurationError(DynslError, ValueError):
    """A configuration is internally inconsistent or infeasible."""


class EstimabilityError(DynslError, RuntimeError):
    """A quantity is not estimable from the data (e.g. zero censoring
    survival where a positive weight is required, or no case/control
    pairs for a rank statistic)."""


class FitError(DynslError, RuntimeError):
    """A model fit failed to converge or the likelihood is degenerate.

    Carries ``diagnostics`` (dict) with the best-so-far state when the
    failing optimizer can provide one.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericalError(DynslError, RuntimeError):
    """A numerical routine (quadrature, linear algebra) broke down."""
