"""
Exception types raised by ccpdml.

Every error derives from :class:`CCPError`; validation failures additionally
derive from ``ValueError`` so callers that only expect the builtin keep
working.
"""


class CCPError(Exception):
    """Base class of all ccpdml errors."""


class ShapeError(CCPError, ValueError):
    """An array does not have the dimensions an operation requires."""


class NumericError(CCPError, ArithmeticError):
    """A loss, gradient or parameter became non-finite.

    Parameters
    ----------
    message : str
        Human readable description.
    diagnostics : dict, optional
        Values that help locate the failure (step, projection, loss, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class ConfigError(CCPError, ValueError):
    """An experiment configuration could not be parsed or validated."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class EmptySelectionError(CCPError, ValueError):
    """An operation received an empty set where at least one element is needed."""


class ClassTooSmallError(CCPError, ValueError):
    """A class has too few samples for a split or a batch."""


class InstanceTooLargeError(CCPError, ValueError):
    """An exhaustive search would enumerate too many candidates."""


class CheckpointFormatError(CCPError, ValueError):
    """A network checkpoint file is malformed."""


class IdxFormatError(CCPError, ValueError):
    """An IDX file is malformed."""


class WrongMagicError(IdxFormatError):
    """The magic number of an IDX file does not match the expected kind."""


class TruncatedFileError(IdxFormatError):
    """An IDX file ends before its declared payload."""


class CountMismatchError(IdxFormatError):
    """Image and label files declare a different number of items."""
