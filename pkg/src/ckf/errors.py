"""Exception hierarchy shared by the filtering and optimization modules."""

from __future__ import annotations

import numpy as np


class ConstrainedFilterError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ConstrainedFilterError, ValueError):
    """Operand shapes do not conform."""


class SingularMatrixError(ConstrainedFilterError, np.linalg.LinAlgError):
    """A matrix that must be factorized is singular or nearly so.

    ``block`` names the offending matrix (for example ``"a_block"`` or
    ``"schur"``) so callers can report where the failure happened.
    """

    def __init__(self, message: str, block: str | None = None):
        super().__init__(message)
        self.block = block


class RankError(SingularMatrixError):
    """A constraint matrix lacks full row rank."""


class InfeasibleError(ConstrainedFilterError):
    """The constraint set has no feasible point (within tolerance)."""


class DegenerateInnovationError(ConstrainedFilterError):
    """The innovation is too small to steer the update onto the constraints."""


class EvaluationError(ConstrainedFilterError):
    """A user-supplied function or Jacobian returned non-finite values."""


class CyclingError(ConstrainedFilterError):
    """The active-set solver kept taking zero-length steps."""
