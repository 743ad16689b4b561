"""Exception hierarchy shared by every strdp module."""


class StrdpError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(StrdpError, ValueError):
    pass


class ShapeError(StrdpError, ValueError):
    pass


class ConfigError(StrdpError, ValueError):
    pass


class RangeError(ConfigError):
    pass


class ScheduleError(StrdpError, IndexError):
    pass


class BundleMismatchError(StrdpError, KeyError):
    pass


class PipelineError(StrdpError, RuntimeError):
    pass


class FormatError(StrdpError, ValueError):
    """Malformed container or image file. ``offset`` is the byte position, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
