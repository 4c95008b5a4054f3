"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class TooLargeError(NumericError):
    """The requested problem exceeds the dense size limits."""
