"""Exception hierarchy.

``DataError`` subclasses describe bad input data and map to CLI exit code 2;
``ModelError`` subclasses are runtime failures and map to exit code 3.
"""


class AsapError(Exception):
    pass


class DataError(AsapError, ValueError):
    pass


class ModelError(AsapError, RuntimeError):
    pass


class MalformedRating(DataError):
    pass


class UnknownPolarity(DataError):
    pass


class MissingColumn(DataError):
    pass


class DuplicateId(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyText(DataError):
    pass


class BadRatios(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class MissingTrace(DataError):
    pass


class TaxonomyMismatch(DataError):
    pass


class SplitLeak(DataError):
    """Raised when test-split data reaches the training loop."""


class NoMentionedAspect(DataError):
    pass


class AspectIndexError(DataError, IndexError):
    pass


class OutOfVocab(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


class CheckpointError(ModelError):
    pass


class IoFailure(AsapError, OSError):
    pass
