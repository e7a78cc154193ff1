"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 2),
``SolverError`` subclasses signal a numerical failure (CLI exit code 3).
"""


class DDMResError(Exception):
    """Base class for all package errors."""


class ValidationError(DDMResError, ValueError):
    pass


class SolverError(DDMResError, RuntimeError):
    pass


class InvalidInterval(ValidationError):
    pass


class InvalidMesh(ValidationError):
    pass


class AmbiguousFace(ValidationError):
    def __init__(self, face, value):
        super().__init__(f"face {face}: beta.n = {value:.3e} is neither zero nor clearly signed")
        self.face = face
        self.value = value


class CycleDetected(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class DegreeTooLow(ValidationError):
    pass


class NonconformingTestSpace(ValidationError):
    pass


class AssumptionViolated(ValidationError):
    pass


class AssumptionUnavailable(ValidationError):
    pass


class BetaVanishesInsideElement(ValidationError):
    pass


class UnboundedTestFunction(ValidationError):
    pass


class InconsistentTrace(ValidationError):
    pass


class DegenerateFit(ValidationError):
    pass


class SingularGram(SolverError):
    pass


class SingularNormalization(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class NewtonDiverged(SolverError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])
