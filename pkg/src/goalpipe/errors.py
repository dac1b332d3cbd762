"""Exception types shared across the package."""


class GoalpipeError(Exception):
    """Base class for all package-specific errors."""


class ZeroVector(GoalpipeError):
    pass


class DimensionMismatch(GoalpipeError):
    pass


class EmptyViewList(GoalpipeError):
    pass


class NonFiniteInput(GoalpipeError):
    pass


class EpisodeOver(GoalpipeError):
    pass


class InadmissibleConfiguration(GoalpipeError):
    pass


class BatchTooSmall(GoalpipeError):
    pass


class BadMagic(GoalpipeError):
    pass


class VersionUnsupported(GoalpipeError):
    pass


class TruncatedFile(GoalpipeError):
    pass


class CountMismatch(GoalpipeError):
    pass


class Misaligned(GoalpipeError):
    pass


class EmptyDataset(GoalpipeError):
    pass


class KOutOfRange(GoalpipeError):
    pass


class EmptyCandidates(GoalpipeError):
    pass


class UnknownConcept(GoalpipeError):
    pass


class Unreachable(GoalpipeError):
    pass


class BadResponse(GoalpipeError):
    pass


class ConfigInvalid(GoalpipeError):
    pass


class MissingArtifact(GoalpipeError):
    pass


class UsageError(GoalpipeError):
    """CLI-level validation failure; maps to exit status 2."""
