"""Exception types shared across the package."""


class HanError(Exception):
    pass


class ShapeError(HanError, ValueError):
    pass


class ConfigError(HanError, ValueError):
    pass


class FormatError(HanError, ValueError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class UsageError(HanError, RuntimeError):
    pass
