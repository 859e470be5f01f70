"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`EarCardioError`, so callers (and the CLI) can tell data problems
apart from programming errors.
"""


class EarCardioError(Exception):
    """Base class for all package errors."""


class EmptySignal(EarCardioError, ValueError):
    pass


class NonPositiveRate(EarCardioError, ValueError):
    pass


class SignalTooShort(EarCardioError, ValueError):
    pass


class InvalidBand(EarCardioError, ValueError):
    pass


# ingestion
class UnsupportedEncoding(EarCardioError, ValueError):
    pass


class CorruptHeader(EarCardioError, ValueError):
    pass


class SchemaMismatch(EarCardioError, ValueError):
    pass


class NonMonotonicTimestamps(EarCardioError, ValueError):
    pass


class TapsNotFound(EarCardioError, ValueError):
    pass


# synth
class InvalidConfig(EarCardioError, ValueError):
    pass


# motion gate
class WrongWindowLength(EarCardioError, ValueError):
    pass


class SingleClassDataset(EarCardioError, ValueError):
    pass


class InconsistentFeatureLength(EarCardioError, ValueError):
    pass


class TooFewSamples(EarCardioError, ValueError):
    pass


# segmentation
class NoPeaksFound(EarCardioError, ValueError):
    pass


class NoAnchors(EarCardioError, ValueError):
    pass


class NoChannels(EarCardioError, ValueError):
    pass


# fiducials
class NoLeftPeak(EarCardioError, ValueError):
    pass


class NoRightPeak(EarCardioError, ValueError):
    pass


# equalizer
class TooFewCycles(EarCardioError, ValueError):
    pass


class DegenerateTarget(EarCardioError, ValueError):
    pass


class ZeroOutput(EarCardioError, ValueError):
    pass


# reconstructor
class ShapeMismatch(EarCardioError, ValueError):
    pass


class EmptyDataset(EarCardioError, ValueError):
    pass


class NonFiniteLoss(EarCardioError, FloatingPointError):
    pass


# metrics
class ConstantInput(EarCardioError, ValueError):
    pass


class LengthMismatch(EarCardioError, ValueError):
    pass


class TooFewSets(EarCardioError, ValueError):
    pass


class EmptyInput(EarCardioError, ValueError):
    pass
