"""Exception hierarchy shared by all skyreg modules."""


class SkyregError(Exception):
    """Base class for every error raised by this package."""


class DataError(SkyregError):
    """Problems with user-supplied data (videos, annotations, checkpoints)."""


# geometry
class DegenerateCorrespondence(SkyregError):
    pass


class DivergentPoint(SkyregError):
    pass


# ingest
class DecodeFailure(DataError):
    pass


class EmptyVideo(DataError):
    pass


class FrameRangeError(SkyregError):
    pass


class OutOfBounds(SkyregError):
    pass


# network
class ShapeMismatch(SkyregError):
    pass


class StateVariantMismatch(SkyregError):
    pass


# trainer
class DatasetEmpty(DataError):
    pass


class CheckpointIncompatible(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


# baselines
class InsufficientFeatures(SkyregError):
    pass


class NoConsensus(SkyregError):
    pass


# evaluation
class MissingPrediction(DataError):
    pass


# stitcher
class CanvasTooLarge(SkyregError):
    pass


# diagnostics
class UnknownLayer(SkyregError):
    pass


# synthetic
class FootprintOverflow(SkyregError):
    pass
