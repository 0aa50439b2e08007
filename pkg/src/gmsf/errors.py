"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input values violate a data invariant (non-finite, wrong shape)."""


class NumericError(ArithmeticError):
    """A NaN or infinity appeared where a finite value is required."""


class FormatError(Exception):
    """A scene or checkpoint file could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    """A checkpoint does not fit the model it is loaded into."""
