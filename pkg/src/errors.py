"""Exception hierarchy for the LSTM-CCTC proposal engine.

Validation errors map to CLI exit code 1, everything else to exit code 2.
"""
from typing import Iterable, Optional


class LstmCctcError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ValidationError(LstmCctcError):
    """Input or configuration rejected before any work was done."""

    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class InvalidGrid(ValidationError):
    """Feature grid is not square, too small, or holds non-finite values."""


class InfeasibleCount(ValidationError):
    """Object count cannot be emitted by a sequence of the given length."""

    def __init__(self, count: int, timesteps: int, message: Optional[str] = None):
        self.count = count
        self.timesteps = timesteps
        super().__init__(
            message or f"count {count} is infeasible for a sequence of {timesteps} frames",
            field="count",
        )


class NonDistribution(ValidationError):
    """A row of frame log-probabilities does not sum to one."""


class SpecValidationError(ValidationError):
    """Scene spec or training config failed validation."""


class ConfigError(ValidationError):
    """Environment or --config file value is invalid."""


class UsageError(ValidationError):
    """Command line could not be parsed."""


class IdMismatch(ValidationError):
    """Image ids of two files that must align do not."""

    def __init__(self, missing: Iterable[str], where: str):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:20])
        more = f" (+{len(self.missing) - 20} more)" if len(self.missing) > 20 else ""
        super().__init__(f"ids missing from {where}: {shown}{more}", field="image")


class ShapeMismatch(LstmCctcError):
    """Array dimensions disagree with the parameters they are used with."""


class TapeMismatch(ShapeMismatch):
    """Backward pass called with a tape that was not produced by these params."""


class PlacementFailure(LstmCctcError):
    """Rejection sampling could not fit the requested objects into a scene."""


class CheckpointError(LstmCctcError):
    """Checkpoint file is missing, corrupt, or inconsistent."""


class DatasetError(LstmCctcError):
    """Dataset file is unreadable or malformed."""


class TrainingDivergence(LstmCctcError):
    """A non-finite loss was produced during training."""

    def __init__(self, sample_id: str, detail: str):
        self.sample_id = sample_id
        super().__init__(f"non-finite loss on sample {sample_id}: {detail}")
