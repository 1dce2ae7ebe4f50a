"""Exception types shared across the package."""


class RtfForgeError(Exception):
    """Base class for all package errors."""


class GeometryError(RtfForgeError, ValueError):
    """Invalid room, pose outside the room, or coincident positions."""


class SizeError(RtfForgeError, ValueError):
    """Wrong signal length, frame count, or array shape."""


class RateError(RtfForgeError, ValueError):
    """Sample-rate mismatch between signals."""


class DegenerateError(RtfForgeError, ValueError):
    """Zero power, zero reference, zero spacing and similar singular inputs."""


class ContractError(RtfForgeError, ValueError):
    """An input violates a documented precondition."""


class DataError(RtfForgeError, ValueError):
    """Empty or too-small datasets, missing neighbours, empty regions."""


class ExtrapolationError(DataError):
    """Query lies outside the interpolation support."""


class NumericError(RtfForgeError, ArithmeticError):
    """Non-finite values or singular systems during fitting."""


class FormatError(RtfForgeError, ValueError):
    """Malformed binary file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(RtfForgeError, ValueError):
    """Bad experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
