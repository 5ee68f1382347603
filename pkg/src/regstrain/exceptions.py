"""Exception hierarchy shared by all modules."""


class RegStrainError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(RegStrainError, ValueError):
    """An argument violates its documented range or shape."""


class ConfigurationError(RegStrainError, ValueError):
    """A configuration cannot be used (empty ROI, unknown config key, ...)."""


class FormatError(RegStrainError):
    """A file could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    offset : int, optional
        Byte offset at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class OutOfBoundsError(RegStrainError, IndexError):
    """A query point lies outside the region where it can be evaluated."""


class LevelTooDeepError(ParameterError):
    """A pyramid level would produce an image smaller than 8x8."""


class DegenerateOverlapError(RegStrainError):
    """Half or more of the metric samples left the moving image."""


class GenerationError(RegStrainError):
    """Synthetic data could not be generated (e.g. inversion diverged)."""


class EmptyResultError(RegStrainError):
    """An operation produced no usable measurement."""


class UndefinedMapeError(RegStrainError):
    """No reference value survived the zero-denominator floor."""
