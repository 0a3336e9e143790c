"""Exception hierarchy shared across the package."""


class SnippetError(Exception):
    """Base class for all errors raised by snippetcov."""


class DatasetError(SnippetError, ValueError):
    """Input data violates a dataset invariant."""


class EmptyDataset(DatasetError):
    pass


class TimeOutOfDomain(DatasetError):
    def __init__(self, subject, t):
        self.subject = subject
        self.t = t
        super().__init__(f"subject {subject!r}: time {t!r} lies outside the domain")


class LengthMismatch(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, line, message=""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class NonpositiveBandwidth(SnippetError, ValueError):
    pass


class TooFewSubjects(SnippetError, ValueError):
    pass


class EmptyCandidateList(SnippetError, ValueError):
    pass


class NoEligibleSubjects(SnippetError, ValueError):
    """No subject has the two observations needed to form a pair."""


class NoEligiblePairs(NoEligibleSubjects):
    pass


class InvalidParameters(SnippetError, ValueError):
    pass


class DomainError(SnippetError, ValueError):
    pass


class AllStartsFailed(SnippetError, RuntimeError):
    pass


class FactorizationFailure(SnippetError, RuntimeError):
    pass


class StageError(SnippetError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class BenchmarkAbort(SnippetError, RuntimeError):
    pass
