from typing import Any


class AlignmentLabError(Exception):
    """Base class for every error raised by the laboratory."""


class InvalidState(AlignmentLabError, ValueError):
    """An ensemble state, vector or lattice basis violates its invariants."""


class InvalidConfig(AlignmentLabError, ValueError):
    """A run configuration or operation parameter is malformed."""


class Unsupported(AlignmentLabError):
    """The operation is not defined for the requested domain or force mode."""


class NumericalBlowup(AlignmentLabError, ArithmeticError):
    """The integration produced non-finite values or an ill-conditioned matrix.

    `record` holds the partial trajectory when raised from `integrate`.
    """

    def __init__(self, message: str, t: float, record: Any | None = None) -> None:
        super().__init__(f"{message} (t={t:.17g})")
        self.t = t
        self.record = record
