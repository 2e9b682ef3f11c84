"""Exception hierarchy shared by every module of the package."""


class NPHMMError(Exception):
    """Base class for all errors raised by ``nphmm``."""


class DimensionError(NPHMMError, ValueError):
    """Array shapes are inconsistent with each other or with the request."""


class DomainError(NPHMMError, ValueError):
    """An argument lies outside the domain of the function."""


class StructureError(NPHMMError, ValueError):
    """A transition matrix is not irreducible and aperiodic."""


class InsufficientDataError(NPHMMError, ValueError):
    """Too few observations to form the requested statistics."""


class CapabilityError(NPHMMError):
    """The request is valid but beyond what the implementation supports."""


class RankDeficiencyError(NPHMMError, ArithmeticError):
    """A matrix that must be full rank has a singular value below threshold.

    ``condition`` carries the offending condition number (``inf`` when the
    smallest singular value is exactly zero).
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class EigenSeparationError(NPHMMError, ArithmeticError):
    """Eigenvalues are complex or closer together than the tolerance."""


class EstimationError(NPHMMError, ArithmeticError):
    """The spectral estimator could not produce an estimate.

    ``diagnostics`` holds whatever numeric diagnostics were collected before
    the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DiagonalizationError(EstimationError):
    """Every random rotation failed to give well separated eigenvalues."""
