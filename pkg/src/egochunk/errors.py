"""Exception hierarchy shared by every stage of the pipeline."""


class EgoChunkError(Exception):
    """Base class for all errors raised by egochunk."""


class ConfigError(EgoChunkError):
    """Invalid configuration value or unknown key."""


class ParseError(EgoChunkError):
    """A side file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


# geometry
class DegenerateProjection(EgoChunkError):
    """Point maps onto the line at infinity."""


class DegenerateResult(EgoChunkError):
    """A computed homography is not invertible."""


class SingularMatrix(EgoChunkError):
    """Inversion of a singular homography was requested."""


class DegenerateConfiguration(EgoChunkError):
    """Point configuration does not determine a unique homography."""


class TooFewMatches(EgoChunkError):
    pass


# features
class EmptyImage(EgoChunkError):
    pass


class IndexOutOfRange(EgoChunkError):
    pass


# trajectory / chunking
class NoConsensus(EgoChunkError):
    """RANSAC could not find a model with enough inliers."""


class TooShortSequence(EgoChunkError):
    pass


# compensation
class ChunkTooShort(EgoChunkError):
    pass


# head
class InvalidDistribution(EgoChunkError):
    pass


class ShapeMismatch(EgoChunkError):
    pass


class LabelOutOfRange(EgoChunkError):
    pass


class ZeroProbabilityTruth(EgoChunkError):
    """The prior zeroes out the ground-truth action pair."""

    def __init__(self, verb, noun):
        self.verb = verb
        self.noun = noun
        super().__init__(f"prior is zero at ground-truth pair (verb={verb}, noun={noun})")


class EmptyList(EgoChunkError):
    pass


class MissingSample(EgoChunkError):
    pass


class StageError(EgoChunkError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
