"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a format or consistency rule."""


class FormatError(DataError):
    """A binary or JSON artifact is malformed, truncated or of the wrong kind."""
