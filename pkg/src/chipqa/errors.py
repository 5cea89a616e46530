"""Exception types raised across the package.

Everything derives from :class:`ChipQAError` so callers (and the CLI) can
separate data problems from programming errors.
"""


class ChipQAError(Exception):
    pass


class MalformedHeader(ChipQAError):
    pass


class GeometryRequired(ChipQAError):
    pass


class TruncatedPayload(UserWarning):
    """Trailing bytes that do not form a whole frame (emitted as a warning)."""


class IndexOutOfRange(ChipQAError, IndexError):
    pass


class FrameTooSmall(ChipQAError):
    pass


class DimensionMismatch(ChipQAError):
    pass


class InsufficientHistory(ChipQAError):
    pass


class VideoTooShort(ChipQAError):
    pass


class DegenerateInput(ChipQAError):
    pass


class OneSidedInput(DegenerateInput):
    pass


class NoPatchSelected(ChipQAError):
    pass


class InsufficientCorpus(ChipQAError):
    pass


class TooFewSamples(ChipQAError):
    pass


class TooFewGroups(ChipQAError):
    pass


class CorruptModel(ChipQAError):
    pass


class LengthMismatch(ChipQAError):
    pass


class DegenerateRanks(ChipQAError):
    pass


class FitDiverged(ChipQAError):
    pass


class TooShort(ChipQAError):
    pass


class EmptyInput(ChipQAError):
    pass


class ConvergenceWarning(UserWarning):
    pass
