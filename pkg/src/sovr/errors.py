"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or arguments (CLI exit code 1)."""


class NumericalError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""
