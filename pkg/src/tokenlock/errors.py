"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class OutOfRangeError(InvalidArgumentError):
    """A token id or index is outside its valid range."""


class EmptyRegionError(ValueError):
    """A metric was asked to average over zero pixels or zero windows."""
