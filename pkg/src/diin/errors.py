"""Exception hierarchy shared across the package."""


class DIINError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DIINError, ValueError):
    """An op received operands whose shapes cannot be combined."""

    def __init__(self, op, message, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: {message}" + (f" (shapes: {detail})" if shapes else ""))


class GraphError(DIINError):
    """Misuse of a tape: foreign loss, non-scalar loss, re-entrant backward."""


class GradientError(DIINError):
    """Non-finite gradient, or a gradient check failed on a coordinate."""


class ConfigError(DIINError):
    """Malformed or inconsistent configuration."""


class DataError(DIINError):
    """Unreadable or malformed input data."""


class CheckpointError(DIINError):
    """Corrupt, truncated, or incompatible checkpoint file."""
