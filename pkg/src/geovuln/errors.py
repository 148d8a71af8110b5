"""Exception types shared across the package."""


class GeovulnError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(GeovulnError):
    """Input file does not match the declared schema (missing column, bad header)."""


class RowError(GeovulnError):
    """A data row is unusable; carries the 1-based file line number."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DomainError(GeovulnError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateFieldError(GeovulnError):
    """A field has zero variance, so autocorrelation statistics are undefined."""


class ConfigError(GeovulnError):
    """Run configuration is missing or inconsistent."""
