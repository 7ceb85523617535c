"""
Exception hierarchy for locsyn.
"""


class LocsynError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatchError(LocsynError):
    """Matrix blocks do not agree with the declared dimensions."""


class NonzeroFeedthroughError(LocsynError):
    """D22 is not identically zero; the closed loop would not be affine in the controller."""


class FileFormatError(LocsynError):
    """A plant, controller or result document could not be parsed."""


class ProblemSpecError(LocsynError):
    """Invalid heat-flow problem specification (regions, grid, weights)."""


class ReductionError(LocsynError):
    """Model reduction could not produce a basis of the requested order."""


class NumericalError(LocsynError):
    """Base class for failures of the numerical kernels."""


class ResolventSingularError(NumericalError):
    """(i*omega*I - A) is singular: A has an eigenvalue on the imaginary axis at omega."""


class InfiniteNormError(NumericalError):
    """The L-infinity norm is infinite (imaginary-axis closed-loop eigenvalue)."""


class LevelNotAdmissibleError(NumericalError):
    """The Hamiltonian level gamma does not exceed the largest singular value of D."""


class EigenSolverError(NumericalError):
    """A dense or iterative eigensolver failed to converge."""
