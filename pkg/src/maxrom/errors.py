"""Exception hierarchy shared by all maxrom modules."""


class MaxromError(Exception):
    """Base class for every error raised by maxrom."""


class InvalidArgumentError(MaxromError, ValueError):
    """An argument violates a documented precondition."""


class ConvergenceError(MaxromError, RuntimeError):
    """An iterative kernel hit its iteration cap."""


class RankDeficientError(MaxromError, ValueError):
    """A requested truncation exceeds the attainable numerical rank."""

    def __init__(self, message, attainable_rank, step=None):
        super().__init__(message)
        self.attainable_rank = attainable_rank
        self.step = step


class MeshQualityError(MaxromError, ValueError):
    """A mesh element is degenerate."""


class BlowUpError(MaxromError, FloatingPointError):
    """The time stepper produced non-finite values."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


class SnapshotFormatError(MaxromError, ValueError):
    """A binary file does not follow the expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(MaxromError, RuntimeError):
    """An operation was called in the wrong order."""


class TrainingDivergedError(MaxromError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class IncompleteDataError(MaxromError, ValueError):
    """A grid-structured dataset is missing entries."""


class InsufficientDataError(InvalidArgumentError):
    """Too few data points for the requested fit."""


class CorruptModelError(MaxromError, ValueError):
    """A reduced-order model bundle is internally inconsistent."""


class StageError(MaxromError, RuntimeError):
    """An offline pipeline stage failed; wraps the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
