"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError and ShapeError -> 2 (data/format), NumericsError -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's rule."""


class NumericsError(ArithmeticError):
    """A computation produced a non-finite value or is numerically unusable."""


class DataError(ValueError):
    """Malformed corpus, vocabulary or checkpoint data."""


class ConfigError(ValueError):
    """Inconsistent or invalid configuration."""
