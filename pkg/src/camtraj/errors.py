"""Exception types shared across the toolkit."""


class CamtrajError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CamtrajError, ValueError):
    """Raised when an input violates a documented precondition."""


class ParseError(CamtrajError, ValueError):
    """Raised on malformed file or token-stream input.

    ``offset`` is the 0-based line number (files) or token index
    (token streams) where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset
