"""Exception types raised across the pipeline."""


class LimbchanError(Exception):
    """Base class for all package errors."""


# record parsing
class MalformedHeader(LimbchanError, ValueError):
    pass


class UnsupportedFormat(LimbchanError, ValueError):
    pass


class TruncatedPayload(LimbchanError, ValueError):
    pass


class ZeroGain(LimbchanError, ValueError):
    pass


# preprocessing
class EmptySignal(LimbchanError, ValueError):
    pass


class UnknownLead(LimbchanError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# numerics
class ShapeMismatch(LimbchanError, ValueError):
    pass


class DegenerateBatch(LimbchanError, ValueError):
    pass


class NonScalarLoss(LimbchanError, ValueError):
    pass


class IndexOutOfRange(LimbchanError, IndexError):
    pass


# training / evaluation / experiments
class EmptyDataset(LimbchanError, ValueError):
    pass


class SingleClassDataset(LimbchanError, ValueError):
    pass


class LengthMismatch(LimbchanError, ValueError):
    pass


class EmptyInput(LimbchanError, ValueError):
    pass


class UnknownScenario(LimbchanError, ValueError):
    pass


class InvalidSpec(LimbchanError, ValueError):
    pass


class ArchiveError(LimbchanError, ValueError):
    pass
