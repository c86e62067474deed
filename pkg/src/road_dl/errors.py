"""Exceptions raised by the road_dl package."""


class RoadError(Exception):
    """Base class for all errors raised by road_dl."""


class DimensionMismatchError(RoadError, ValueError):
    """Raised when matrix or image shapes do not agree."""


class FormatError(RoadError, ValueError):
    """Raised when a matrix, image or configuration file is malformed."""


class PenaltyBoundError(RoadError, ValueError):
    """Raised when inexact ADMM penalties violate rho_i > beta_i + 2."""


class NumericalFailureError(RoadError, ArithmeticError):
    """
    Raised when an SVD or linear solve fails to converge.

    Parameters
    ----------
    message : str
        Description of the failure.
    atom : int or None
        Index of the atom being updated when the failure happened, if any.
    """

    def __init__(self, message: str, atom: int | None = None) -> None:
        """Initialize the error with an optional atom index."""
        if atom is not None:
            message = f"{message} (atom {atom})"
        super().__init__(message)
        self.atom = atom
