"""Exception hierarchy shared across the package."""


class CrowdRankError(Exception):
    """Base class for every error raised by crowdrank."""


class UnknownModel(CrowdRankError, KeyError):
    pass


class DegenerateScores(CrowdRankError):
    """All scores coincide; callers usually fall back to uniform weights."""


class SelfJudgeRejected(CrowdRankError):
    pass


class BackendUnavailable(CrowdRankError):
    """A backend could not produce a response or verdict (after retries)."""


class MalformedVerdict(BackendUnavailable):
    pass


class StorageError(CrowdRankError, OSError):
    pass


class EmptyJudgePanel(CrowdRankError):
    pass


class EmptyQuestionSet(CrowdRankError):
    pass


class TooFewSeeds(CrowdRankError):
    pass


class AlreadyRanked(CrowdRankError):
    pass


class NonConvergence(CrowdRankError):
    pass


class InconsistentModelSets(CrowdRankError):
    pass


class DegenerateLength(CrowdRankError):
    pass


class TopKExceedsPool(CrowdRankError):
    pass


class VersionMismatch(CrowdRankError):
    pass


class ConfigDrift(CrowdRankError):
    pass


class CorruptCheckpoint(CrowdRankError):
    pass


class RunLocked(CrowdRankError):
    pass


class DisconnectedGraphWarning(UserWarning):
    """The comparison graph splits into several components."""
