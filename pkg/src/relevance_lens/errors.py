"""Exception hierarchy shared by every module.

The CLI maps :class:`NumericalError` (and unexpected failures) to exit code 2
and every other :class:`RelevanceLensError` to exit code 1.
"""


class RelevanceLensError(Exception):
    """Base class for all toolkit errors."""


class InputError(RelevanceLensError, ValueError):
    """Caller supplied an argument outside an operation's contract."""


class FormatError(RelevanceLensError):
    """A file does not follow its declared on-disk format."""


class ValidationError(RelevanceLensError):
    """A structurally readable object violates a semantic invariant."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class NumericalError(RelevanceLensError, ArithmeticError):
    """A computation hit a numerically undefined point (e.g. a zero LRP denominator)."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class UndefinedMetricError(RelevanceLensError, ValueError):
    """A metric is undefined for the supplied data (e.g. single-class ROC-AUC)."""
