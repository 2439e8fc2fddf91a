"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class StateError(RuntimeError):
    """An object is not in the right state for the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DegenerateGraphError(ValueError):
    """The frame graph is too small for the requested neighbour operation."""


class ParseError(ValueError):
    """A container file failed to parse.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
