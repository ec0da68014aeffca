"""Exception types shared across the package.

Every error raised by the library derives from :class:`CareRankError` so
callers (and the CLI exit-code mapping) can distinguish our failures from
generic ones.
"""


class CareRankError(Exception):
    """Base class for all errors raised by care_rank."""


class InvalidArgumentError(CareRankError, ValueError):
    """Non-finite input, dimension mismatch, or an out-of-range parameter."""


class DimensionError(InvalidArgumentError):
    """Shapes that can never be valid (e.g. more covariates than items allow)."""


class DegenerateDesignError(CareRankError):
    """The augmented covariate matrix is rank deficient."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class DegenerateColumnError(DegenerateDesignError):
    """A covariate column is constant and cannot be standardized."""


class ConnectivityError(CareRankError):
    """The comparison graph is disconnected; consistent ranking is impossible."""

    def __init__(self, message: str, components: list[list[int]] | None = None):
        super().__init__(message)
        self.components = components or []


class DegenerateContrastError(CareRankError):
    """The requested contrast lies entirely in the unidentifiable space."""


class ConfigurationError(CareRankError):
    """An experiment or CLI configuration that cannot be run as given."""


class ParseError(CareRankError):
    """A malformed input file; carries the offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row
