"""Exception hierarchy shared across the package."""


class BirvoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BirvoError):
    """Operands do not conform to an operation's shape contract."""


class NumericError(BirvoError):
    """A computation produced non-finite values under checked mode."""


class ContractError(BirvoError):
    """An input violates a documented precondition."""


class ParseError(BirvoError):
    """A file or text payload is malformed."""


class ConfigError(BirvoError):
    """A configuration is internally inconsistent or unusable."""
