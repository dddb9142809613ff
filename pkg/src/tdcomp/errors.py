"""Exception hierarchy shared by every module of the package."""


class TdcompError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TdcompError, ValueError):
    """Non-finite entries, asymmetric input where symmetry is required, etc."""


class DimensionError(TdcompError, ValueError):
    """Matrix shapes do not agree."""


class SingularMatrixError(TdcompError, ArithmeticError):
    """Linear solve against a (numerically) singular matrix."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(message)
        self.cond = cond


class ConfigurationError(TdcompError, ValueError):
    """Inconsistent options, e.g. integrator step too large or variant mismatch."""


class SynthesisError(TdcompError):
    """Base class for failures of the observer design pipeline."""


class WrongCaseError(SynthesisError):
    """A routine was called on a problem that belongs to a different design case."""


class NoFreedomError(SynthesisError):
    """The left null space needed for an internal delay term is empty."""


class UnsupportedCaseError(SynthesisError):
    """Rank-deficient two-delay measurement; no design procedure is implemented."""


class SynthesisInconsistencyError(SynthesisError):
    """Assembled gains do not annihilate the error coefficients."""


class DecouplingError(SynthesisError):
    """The observer leaves the error dynamics coupled to the plant."""


class SolverError(TdcompError):
    """The semidefinite engine could not reach a verdict."""


class NoFeasibleStartError(SolverError):
    """A delay sweep was started from a delay at which the LMI is not feasible."""
