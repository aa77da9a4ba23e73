"""Exception types shared across the package."""


class DecodeError(ValueError):
    """An image or mask file could not be decoded."""


class FormatError(ValueError):
    """A binary artifact (weights, flow) is malformed."""


class NumericalError(FloatingPointError):
    """A computation produced non-finite values."""
