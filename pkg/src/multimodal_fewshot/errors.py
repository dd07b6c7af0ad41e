"""Exception types shared across the package."""


class FewshotError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(FewshotError, ValueError):
    """A file does not follow its declared container format."""


class ShapeError(FewshotError, ValueError):
    """An array or sequence has the wrong dimensions."""


class EmptyItemError(FewshotError, ValueError):
    """A sequence that must be non-empty is empty."""


class ArgumentError(FewshotError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateVectorError(FewshotError, ValueError):
    """A zero-norm vector reached a cosine computation."""


class ContaminationError(FewshotError, ValueError):
    """Background training data contains a held-out test class."""


class StateError(FewshotError, RuntimeError):
    """An operation was called on an object missing required state."""


class NoNegativeError(FewshotError, ValueError):
    """No item outside the anchor's class is available as a negative."""


class IoError(FewshotError, OSError):
    """A pipeline output path could not be read or written."""
