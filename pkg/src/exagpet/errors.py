"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: UsageError -> 2, DataError -> 3,
NumericalFailureError -> 4.
"""


class ExagPetError(Exception):
    """Base class for all package errors."""


class UsageError(ExagPetError):
    """Caller violated a precondition or supplied an invalid configuration value."""


class ConfigurationError(UsageError):
    """A model, ensemble, or run is wired together inconsistently."""


class DataError(ExagPetError):
    """Input data violates its declared schema or invariants."""


class MalformedSequenceError(DataError):
    """A masked sequence does not contain exactly one mask sentinel."""


class VocabularyError(DataError):
    """A candidate token is not scoreable under the backend vocabulary."""


class CoverageError(DataError):
    """A labeled collection is missing examples for one or more labels."""


class CheckpointError(ExagPetError):
    """A checkpoint directory is corrupt or has an unsupported format version."""


class NumericalFailureError(ExagPetError):
    """Training produced a non-finite quantity."""

    def __init__(self, message: str, instance_id: str | None = None):
        super().__init__(message)
        self.instance_id = instance_id


class RateLimitError(ExagPetError):
    """A remote service kept rate-limiting after the retry budget was spent."""


class StageError(ExagPetError):
    """A pipeline stage failed; records which stage and ensemble member."""

    def __init__(self, stage: str, member: int | None, cause: BaseException):
        where = f"stage {stage!r}" + (f", member {member}" if member is not None else "")
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.member = member
        self.__cause__ = cause
