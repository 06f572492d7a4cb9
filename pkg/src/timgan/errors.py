"""Exception types shared across the package."""


class TimGanError(Exception):
    """Base class for package errors."""


class ShapeError(TimGanError):
    """Tensor shape violates an operation's contract."""


class DomainError(TimGanError):
    """Scalar argument outside its legal domain (e.g. tau <= 0)."""


class EmptySceneError(TimGanError):
    """Requested edit operation is illegal for the given scene."""


class AllMaskedError(TimGanError):
    """Attention pooling received a sequence with no real tokens."""


class NumericalError(TimGanError):
    """Numerical routine left its validity envelope (e.g. non-PSD matrix)."""


class EmptyPoolError(TimGanError):
    """Retrieval asked to rank against an empty candidate pool."""


class ToleranceExceeded(TimGanError):
    """Gradient check exceeded the requested tolerance."""

    def __init__(self, worst_name: str, worst_err: float, tol: float):
        self.worst_name = worst_name
        self.worst_err = worst_err
        self.tol = tol
        super().__init__(
            f"gradient mismatch on {worst_name!r}: rel err {worst_err:.3e} > tol {tol:.3e}"
        )
