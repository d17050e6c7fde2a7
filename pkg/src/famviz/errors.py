"""Exception types shared across the package."""


class FamvizError(ValueError):
    pass


class MalformedInputError(FamvizError):
    pass


class InsufficientDataError(FamvizError):
    pass


class DegenerateInputError(FamvizError):
    pass


class DimensionMismatchError(FamvizError):
    pass


class FormatError(FamvizError):
    """Raised for unreadable containers; ``chunk`` names the offending part."""

    def __init__(self, message: str, chunk: str | None = None):
        super().__init__(message)
        self.chunk = chunk
