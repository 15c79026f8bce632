"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ValidationError(ValueError):
    """Input values violate a numeric precondition (e.g. non-finite data)."""


class ContractError(ValueError):
    """A caller broke an API contract (wrong rank, empty input, ...)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class DomainError(ValueError):
    """Distribution parameters outside their valid domain."""


class ParseError(ValueError):
    """Malformed dataset line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(ValueError):
    """Corrupt, truncated or duplicated data."""


class IncompatibleCheckpointError(ValueError):
    """Checkpoint version or layout does not match what was expected."""
